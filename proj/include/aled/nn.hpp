#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "aled/tensor.hpp"

namespace aled::nn {

/// One value in the computation graph. Nodes are created in topological order;
/// backward() walks them in reverse creation order. Gradients of parameter
/// leaves accumulate across backward() calls until cleared by the optimizer.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first contribution
  bool needs_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;
  std::uint64_t id = 0;

  Tensor& ensure_grad();
  bool has_grad() const { return !grad.empty(); }
};

using NodeRef = std::shared_ptr<Node>;

NodeRef constant(Tensor value);
NodeRef parameter(Tensor value);

/// Copies the value into a fresh constant leaf, severing the tape.
NodeRef detach(const NodeRef& x);

/// Reverse-mode accumulation from a scalar root.
void backward(const NodeRef& root);

// ---- elementwise ----
NodeRef add(const NodeRef& a, const NodeRef& b);
NodeRef sub(const NodeRef& a, const NodeRef& b);
NodeRef mul(const NodeRef& a, const NodeRef& b);
NodeRef affine(const NodeRef& x, double scale, double shift);
NodeRef sigmoid(const NodeRef& x);
NodeRef tanh(const NodeRef& x);
/// y = x for x > 0, slope * x otherwise; slope is a 1-element parameter.
NodeRef prelu(const NodeRef& x, const NodeRef& slope);

// ---- structural ----
NodeRef concat_channels(const NodeRef& a, const NodeRef& b);
NodeRef slice_channels(const NodeRef& x, int c0, int c1);
NodeRef sum_all(const NodeRef& x);  // scalar

// ---- conv / normalization ----

/// 2-D convolution with zero padding. x: (ic, h, w); w: (oc, ic, kh, kw);
/// optional bias: (oc). Output (oc, oh, ow) with oh = (h + 2p - kh)/s + 1.
NodeRef conv2d(const NodeRef& x, const NodeRef& w, const NodeRef& b, int stride, int pad);

/// Per-channel normalization over the spatial extent (non-affine).
NodeRef instance_norm(const NodeRef& x, double eps = 1e-5);

// ---- convex upsampling pieces ----

/// x has K*groups channels laid out channel = k*groups + g; softmax is taken
/// over k independently per group and pixel.
NodeRef mask_softmax(const NodeRef& x, int neighbors, int groups);

/// features: (C, h, w); mask: (9*4, h, w), already normalized. Every fine
/// pixel of the (C, 2h, 2w) output is the mask-weighted combination of its
/// 3x3 coarse neighborhood (zero padding at borders).
NodeRef convex_combine(const NodeRef& features, const NodeRef& mask);

// ---- plain-tensor helpers (same kernels as the ops) ----
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad);
Tensor mask_softmax_forward(const Tensor& x, int neighbors, int groups);
Tensor convex_combine_forward(const Tensor& features, const Tensor& mask);
/// Reference 2x nearest-neighbor upsampling (for conformance checks).
Tensor nearest_upsample2x(const Tensor& features);

}  // namespace aled::nn
