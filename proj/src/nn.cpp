#include "aled/nn.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "aled/errors.hpp"

#ifdef ALED_HAVE_CBLAS
#include <cblas.h>
#endif

namespace aled::nn {
namespace {

std::atomic<std::uint64_t> g_next_id{1};

NodeRef make_node(Tensor value, std::vector<NodeRef> parents, std::function<void(Node&)> back) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  for (const NodeRef& p : parents)
    if (p && p->needs_grad) n->needs_grad = true;
  if (n->needs_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(back);
  }
  return n;
}

void require(bool cond, const char* msg) {
  if (!cond) throw UsageError(msg);
}

// C (MxN) = A (MxK) * B (KxN), optionally accumulating into C.
void gemm_nn(int m, int n, int k, const double* a, const double* b, double* c, bool acc) {
#ifdef ALED_HAVE_CBLAS
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, n, k, 1.0, a, k, b, n,
              acc ? 1.0 : 0.0, c, n);
#else
  if (!acc) std::memset(c, 0, sizeof(double) * static_cast<std::size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    for (int kk = 0; kk < k; ++kk) {
      const double av = a[static_cast<std::size_t>(i) * k + kk];
      const double* brow = b + static_cast<std::size_t>(kk) * n;
      double* crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
#endif
}

// C (MxN) = A (MxK) * B(NxK)^T
void gemm_nt(int m, int n, int k, const double* a, const double* b, double* c, bool acc) {
#ifdef ALED_HAVE_CBLAS
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, m, n, k, 1.0, a, k, b, k,
              acc ? 1.0 : 0.0, c, n);
#else
  if (!acc) std::memset(c, 0, sizeof(double) * static_cast<std::size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      const double* arow = a + static_cast<std::size_t>(i) * k;
      const double* brow = b + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
      c[static_cast<std::size_t>(i) * n + j] += s;
    }
#endif
}

// C (MxN) = A (KxM)^T * B (KxN)
void gemm_tn(int m, int n, int k, const double* a, const double* b, double* c, bool acc) {
#ifdef ALED_HAVE_CBLAS
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, m, n, k, 1.0, a, m, b, n,
              acc ? 1.0 : 0.0, c, n);
#else
  if (!acc) std::memset(c, 0, sizeof(double) * static_cast<std::size_t>(m) * n);
  for (int kk = 0; kk < k; ++kk)
    for (int i = 0; i < m; ++i) {
      const double av = a[static_cast<std::size_t>(kk) * m + i];
      const double* brow = b + static_cast<std::size_t>(kk) * n;
      double* crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
#endif
}

struct ConvDims {
  int ic, h, w, oc, kh, kw, oh, ow;
  int k() const { return ic * kh * kw; }
  int n() const { return oh * ow; }
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  require(x.rank() == 3, "conv2d: input must be (c, h, w)");
  require(w.rank() == 4, "conv2d: weight must be (oc, ic, kh, kw)");
  ConvDims d;
  d.ic = x.dim(0);
  d.h = x.dim(1);
  d.w = x.dim(2);
  d.oc = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  require(w.dim(1) == d.ic, "conv2d: input channels do not match weight");
  require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  d.oh = (d.h + 2 * pad - d.kh) / stride + 1;
  d.ow = (d.w + 2 * pad - d.kw) / stride + 1;
  require(d.oh > 0 && d.ow > 0, "conv2d: output would be empty");
  return d;
}

void im2col(const Tensor& x, const ConvDims& d, int stride, int pad, std::vector<double>& col) {
  col.assign(static_cast<std::size_t>(d.k()) * d.n(), 0.0);
  for (int ci = 0; ci < d.ic; ++ci)
    for (int ky = 0; ky < d.kh; ++ky)
      for (int kx = 0; kx < d.kw; ++kx) {
        const std::size_t row = (static_cast<std::size_t>(ci) * d.kh + ky) * d.kw + kx;
        double* dst = col.data() + row * d.n();
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= d.h) continue;
          const double* src = x.data() + (static_cast<std::size_t>(ci) * d.h + iy) * d.w;
          double* drow = dst + static_cast<std::size_t>(oy) * d.ow;
          for (int ox = 0; ox < d.ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < d.w) drow[ox] = src[ix];
          }
        }
      }
}

void col2im_add(const std::vector<double>& col, const ConvDims& d, int stride, int pad,
                Tensor& dx) {
  for (int ci = 0; ci < d.ic; ++ci)
    for (int ky = 0; ky < d.kh; ++ky)
      for (int kx = 0; kx < d.kw; ++kx) {
        const std::size_t row = (static_cast<std::size_t>(ci) * d.kh + ky) * d.kw + kx;
        const double* src = col.data() + row * d.n();
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= d.h) continue;
          double* dst = dx.data() + (static_cast<std::size_t>(ci) * d.h + iy) * d.w;
          const double* srow = src + static_cast<std::size_t>(oy) * d.ow;
          for (int ox = 0; ox < d.ow; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < d.w) dst[ix] += srow[ox];
          }
        }
      }
}

}  // namespace

Tensor& Node::ensure_grad() {
  if (grad.empty()) grad = Tensor(value.shape());
  return grad;
}

NodeRef constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return n;
}

NodeRef parameter(Tensor value) {
  auto n = constant(std::move(value));
  n->needs_grad = true;
  return n;
}

NodeRef detach(const NodeRef& x) { return constant(x->value); }

void backward(const NodeRef& root) {
  require(root != nullptr && root->value.size() == 1, "backward: root must be a scalar node");
  if (!root->needs_grad) return;

  std::vector<Node*> reachable;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    reachable.push_back(n);
    for (const NodeRef& p : n->parents)
      if (p && p->needs_grad && seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(reachable.begin(), reachable.end(),
            [](const Node* a, const Node* b) { return a->id > b->id; });

  root->ensure_grad()[0] += 1.0;
  for (Node* n : reachable)
    if (n->backprop && n->has_grad()) n->backprop(*n);
}

NodeRef add(const NodeRef& a, const NodeRef& b) {
  require(a->value.same_shape(b->value), "add: shape mismatch");
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->needs_grad) {
      Tensor& g = a->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (b->needs_grad) {
      Tensor& g = b->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

NodeRef sub(const NodeRef& a, const NodeRef& b) {
  require(a->value.same_shape(b->value), "sub: shape mismatch");
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] - b->value[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->needs_grad) {
      Tensor& g = a->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (b->needs_grad) {
      Tensor& g = b->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

NodeRef mul(const NodeRef& a, const NodeRef& b) {
  require(a->value.same_shape(b->value), "mul: shape mismatch");
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->needs_grad) {
      Tensor& g = a->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * b->value[i];
    }
    if (b->needs_grad) {
      Tensor& g = b->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * a->value[i];
    }
  });
}

NodeRef affine(const NodeRef& x, double scale, double shift) {
  Tensor out(x->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * x->value[i] + shift;
  return make_node(std::move(out), {x}, [x, scale](Node& n) {
    Tensor& g = x->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * n.grad[i];
  });
}

NodeRef sigmoid(const NodeRef& x) {
  Tensor out(x->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x->value[i]));
  return make_node(std::move(out), {x}, [x](Node& n) {
    Tensor& g = x->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = n.value[i];
      g[i] += n.grad[i] * y * (1.0 - y);
    }
  });
}

NodeRef tanh(const NodeRef& x) {
  Tensor out(x->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x->value[i]);
  return make_node(std::move(out), {x}, [x](Node& n) {
    Tensor& g = x->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = n.value[i];
      g[i] += n.grad[i] * (1.0 - y * y);
    }
  });
}

NodeRef prelu(const NodeRef& x, const NodeRef& slope) {
  require(slope->value.size() == 1, "prelu: slope must have a single element");
  const double a = slope->value[0];
  Tensor out(x->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x->value[i];
    out[i] = v > 0.0 ? v : a * v;
  }
  return make_node(std::move(out), {x, slope}, [x, slope, a](Node& n) {
    if (x->needs_grad) {
      Tensor& g = x->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += n.grad[i] * (x->value[i] > 0.0 ? 1.0 : a);
    }
    if (slope->needs_grad) {
      double ds = 0.0;
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        if (x->value[i] <= 0.0) ds += n.grad[i] * x->value[i];
      slope->ensure_grad()[0] += ds;
    }
  });
}

NodeRef concat_channels(const NodeRef& a, const NodeRef& b) {
  require(a->value.rank() == 3 && b->value.rank() == 3, "concat_channels: rank-3 inputs expected");
  require(a->value.h() == b->value.h() && a->value.w() == b->value.w(),
          "concat_channels: spatial dims differ");
  const int ca = a->value.c(), cb = b->value.c();
  Tensor out({ca + cb, a->value.h(), a->value.w()});
  std::memcpy(out.data(), a->value.data(), sizeof(double) * a->value.size());
  std::memcpy(out.data() + a->value.size(), b->value.data(), sizeof(double) * b->value.size());
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->needs_grad) {
      Tensor& g = a->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (b->needs_grad) {
      Tensor& g = b->ensure_grad();
      const std::size_t off = a->value.size();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[off + i];
    }
  });
}

NodeRef slice_channels(const NodeRef& x, int c0, int c1) {
  require(x->value.rank() == 3, "slice_channels: rank-3 input expected");
  require(0 <= c0 && c0 < c1 && c1 <= x->value.c(), "slice_channels: bad channel range");
  const int h = x->value.h(), w = x->value.w();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out({c1 - c0, h, w});
  std::memcpy(out.data(), x->value.data() + static_cast<std::size_t>(c0) * plane,
              sizeof(double) * out.size());
  return make_node(std::move(out), {x}, [x, c0, plane](Node& n) {
    Tensor& g = x->ensure_grad();
    double* dst = g.data() + static_cast<std::size_t>(c0) * plane;
    for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
  });
}

NodeRef sum_all(const NodeRef& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x->value.size(); ++i) s += x->value[i];
  return make_node(Tensor::scalar(s), {x}, [x](Node& n) {
    Tensor& g = x->ensure_grad();
    const double go = n.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += go;
  });
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* b, int stride, int pad) {
  const ConvDims d = conv_dims(x, w, stride, pad);
  if (b) require(b->size() == static_cast<std::size_t>(d.oc), "conv2d: bias size mismatch");
  std::vector<double> col;
  im2col(x, d, stride, pad, col);
  Tensor out({d.oc, d.oh, d.ow});
  gemm_nn(d.oc, d.n(), d.k(), w.data(), col.data(), out.data(), false);
  if (b)
    for (int oc = 0; oc < d.oc; ++oc) {
      const double bv = (*b)[static_cast<std::size_t>(oc)];
      double* row = out.data() + static_cast<std::size_t>(oc) * d.n();
      for (int i = 0; i < d.n(); ++i) row[i] += bv;
    }
  return out;
}

NodeRef conv2d(const NodeRef& x, const NodeRef& w, const NodeRef& b, int stride, int pad) {
  Tensor out = conv2d_forward(x->value, w->value, b ? &b->value : nullptr, stride, pad);
  const ConvDims d = conv_dims(x->value, w->value, stride, pad);
  std::vector<NodeRef> parents{x, w};
  if (b) parents.push_back(b);
  return make_node(std::move(out), std::move(parents), [x, w, b, d, stride, pad](Node& n) {
    const double* g = n.grad.data();
    if (b && b->needs_grad) {
      Tensor& gb = b->ensure_grad();
      for (int oc = 0; oc < d.oc; ++oc) {
        const double* row = g + static_cast<std::size_t>(oc) * d.n();
        double s = 0.0;
        for (int i = 0; i < d.n(); ++i) s += row[i];
        gb[static_cast<std::size_t>(oc)] += s;
      }
    }
    if (w->needs_grad) {
      // im2col is recomputed here instead of cached to keep unrolled
      // sequences within memory bounds.
      std::vector<double> col;
      im2col(x->value, d, stride, pad, col);
      Tensor& gw = w->ensure_grad();
      gemm_nt(d.oc, d.k(), d.n(), g, col.data(), gw.data(), true);
    }
    if (x->needs_grad) {
      std::vector<double> dcol(static_cast<std::size_t>(d.k()) * d.n());
      gemm_tn(d.k(), d.n(), d.oc, w->value.data(), g, dcol.data(), false);
      col2im_add(dcol, d, stride, pad, x->ensure_grad());
    }
  });
}

NodeRef instance_norm(const NodeRef& x, double eps) {
  require(x->value.rank() == 3, "instance_norm: rank-3 input expected");
  const int c = x->value.c(), h = x->value.h(), w = x->value.w();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out(x->value.shape());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c));
  for (int ci = 0; ci < c; ++ci) {
    const double* src = x->value.data() + ci * plane;
    double mean = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mean += src[i];
    mean /= static_cast<double>(plane);
    double var = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const double d = src[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(plane);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(ci)] = is;
    double* dst = out.data() + ci * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = (src[i] - mean) * is;
  }
  return make_node(std::move(out), {x}, [x, inv_std, c, plane](Node& n) {
    Tensor& gx = x->ensure_grad();
    for (int ci = 0; ci < c; ++ci) {
      const double* y = n.value.data() + ci * plane;
      const double* g = n.grad.data() + ci * plane;
      double gm = 0.0, gym = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        gm += g[i];
        gym += g[i] * y[i];
      }
      gm /= static_cast<double>(plane);
      gym /= static_cast<double>(plane);
      const double is = (*inv_std)[static_cast<std::size_t>(ci)];
      double* dst = gx.data() + ci * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += is * (g[i] - gm - y[i] * gym);
    }
  });
}

Tensor mask_softmax_forward(const Tensor& x, int neighbors, int groups) {
  require(x.rank() == 3 && x.c() == neighbors * groups, "mask_softmax: channel count mismatch");
  const int h = x.h(), w = x.w();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out(x.shape());
  for (int g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < plane; ++i) {
      double mx = -1e300;
      for (int k = 0; k < neighbors; ++k)
        mx = std::max(mx, x[static_cast<std::size_t>(k * groups + g) * plane + i]);
      double z = 0.0;
      for (int k = 0; k < neighbors; ++k) {
        const std::size_t idx = static_cast<std::size_t>(k * groups + g) * plane + i;
        out[idx] = std::exp(x[idx] - mx);
        z += out[idx];
      }
      for (int k = 0; k < neighbors; ++k)
        out[static_cast<std::size_t>(k * groups + g) * plane + i] /= z;
    }
  return out;
}

NodeRef mask_softmax(const NodeRef& x, int neighbors, int groups) {
  Tensor out = mask_softmax_forward(x->value, neighbors, groups);
  const std::size_t plane = static_cast<std::size_t>(x->value.h()) * x->value.w();
  return make_node(std::move(out), {x}, [x, neighbors, groups, plane](Node& n) {
    Tensor& gx = x->ensure_grad();
    for (int g = 0; g < groups; ++g)
      for (std::size_t i = 0; i < plane; ++i) {
        double dot = 0.0;
        for (int k = 0; k < neighbors; ++k) {
          const std::size_t idx = static_cast<std::size_t>(k * groups + g) * plane + i;
          dot += n.grad[idx] * n.value[idx];
        }
        for (int k = 0; k < neighbors; ++k) {
          const std::size_t idx = static_cast<std::size_t>(k * groups + g) * plane + i;
          gx[idx] += n.value[idx] * (n.grad[idx] - dot);
        }
      }
  });
}

Tensor convex_combine_forward(const Tensor& f, const Tensor& m) {
  require(f.rank() == 3 && m.rank() == 3, "convex_combine: rank-3 inputs expected");
  require(m.c() == 36, "convex_combine: mask must have 9*4 channels");
  require(m.h() == f.h() && m.w() == f.w(), "convex_combine: mask/feature dims differ");
  const int c = f.c(), h = f.h(), w = f.w();
  Tensor out({c, 2 * h, 2 * w});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int s = 0; s < 4; ++s) {
          double acc = 0.0;
          for (int k = 0; k < 9; ++k) {
            const int yy = y + k / 3 - 1, xx = x + k % 3 - 1;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            acc += m.at(k * 4 + s, y, x) * f.at(ci, yy, xx);
          }
          out.at(ci, 2 * y + s / 2, 2 * x + s % 2) = acc;
        }
  return out;
}

NodeRef convex_combine(const NodeRef& features, const NodeRef& mask) {
  Tensor out = convex_combine_forward(features->value, mask->value);
  return make_node(std::move(out), {features, mask}, [features, mask](Node& n) {
    const Tensor& f = features->value;
    const Tensor& m = mask->value;
    const int c = f.c(), h = f.h(), w = f.w();
    Tensor* gf = features->needs_grad ? &features->ensure_grad() : nullptr;
    Tensor* gm = mask->needs_grad ? &mask->ensure_grad() : nullptr;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int s = 0; s < 4; ++s) {
          const int fy = 2 * y + s / 2, fx = 2 * x + s % 2;
          for (int k = 0; k < 9; ++k) {
            const int yy = y + k / 3 - 1, xx = x + k % 3 - 1;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            const double mv = m.at(k * 4 + s, y, x);
            double dm = 0.0;
            for (int ci = 0; ci < c; ++ci) {
              const double go = n.grad.at(ci, fy, fx);
              if (gf) gf->at(ci, yy, xx) += mv * go;
              dm += f.at(ci, yy, xx) * go;
            }
            if (gm) gm->at(k * 4 + s, y, x) += dm;
          }
        }
  });
}

Tensor nearest_upsample2x(const Tensor& f) {
  require(f.rank() == 3, "nearest_upsample2x: rank-3 input expected");
  Tensor out({f.c(), 2 * f.h(), 2 * f.w()});
  for (int ci = 0; ci < f.c(); ++ci)
    for (int y = 0; y < 2 * f.h(); ++y)
      for (int x = 0; x < 2 * f.w(); ++x) out.at(ci, y, x) = f.at(ci, y / 2, x / 2);
  return out;
}

}  // namespace aled::nn
