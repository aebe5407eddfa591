#pragma once

#include <utility>
#include <vector>

#include "aled/core_types.hpp"
#include "aled/nn.hpp"

namespace aled {

struct LossConfig {
  double alpha_warmup = 0.1;  // gradient-loss weight during epoch 1
  double alpha_main = 1.0;    // and afterwards
  std::vector<int> scales{1, 2, 4, 8, 16};

  double alpha_for_epoch(int epoch_1based) const {
    return epoch_1based <= 1 ? alpha_warmup : alpha_main;
  }
};

/// Sum over valid pixels of |pred - gt|. Invalid pixels contribute nothing.
/// An all-invalid mask yields 0 and sets *empty_mask (when provided).
double l1_loss(const Tensor& pred, const Tensor& gt, const Mask& valid,
               bool* empty_mask = nullptr);

/// Multiscale gradient matching: for every scale h, each pixel contributes the
/// Euclidean norm of the included components of g[pred] - g[gt], where the
/// x component is included iff (x, y) and (x+h, y) are in-bounds and valid,
/// and likewise for y. Scales larger than the image contribute 0.
double multiscale_gradient_loss(const Tensor& pred, const Tensor& gt, const Mask& valid,
                                const std::vector<int>& scales = {1, 2, 4, 8, 16});

struct SupervisionPair {
  const DenseDepthGT* begin = nullptr;
  const DenseDepthGT* end = nullptr;
};

/// Eq-style sequence objective: sum over steps of
///   L1(d_bf, gt_begin) + alpha * Lmsg(d_bf, gt_begin)
/// + L1(d_af, gt_end)   + alpha * Lmsg(d_af, gt_end)
/// computed in normalized depth units (gt values divided by max_range).
double total_loss(const std::vector<DepthPair>& preds, const std::vector<SupervisionPair>& gts,
                  const LossConfig& config, double alpha, double max_range);

// Graph-node forms used during training; forward values match the plain
// functions exactly.
nn::NodeRef l1_loss_node(const nn::NodeRef& pred, const Tensor& gt, const Mask& valid);
nn::NodeRef msg_loss_node(const nn::NodeRef& pred, const Tensor& gt, const Mask& valid,
                          const std::vector<int>& scales = {1, 2, 4, 8, 16});

}  // namespace aled
