#include "aled/losses.hpp"

#include <cmath>

#include "aled/errors.hpp"
#include "aled/representations.hpp"

namespace aled {
namespace {

void check_pair(const Tensor& pred, const Tensor& gt, const Mask& valid) {
  if (pred.size() != gt.size()) throw UsageError("loss: pred/gt size mismatch");
  if (valid.size() != gt.size()) throw UsageError("loss: mask size mismatch");
  if (gt.rank() != 2) throw UsageError("loss: ground truth must be an (h, w) image");
}

// Accumulates the masked multiscale gradient loss; when grad != nullptr also
// adds dL/dpred (same layout as pred).
double msg_eval(const double* pred, const Tensor& gt, const Mask& valid,
                const std::vector<int>& scales, double* grad) {
  const int h = gt.h(), w = gt.w();
  double total = 0.0;
  for (int hs : scales) {
    if (hs >= h && hs >= w) continue;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        const bool use_x = x + hs < w && valid[i] && valid[i + hs];
        const bool use_y = y + hs < h && valid[i] && valid[i + static_cast<std::size_t>(hs) * w];
        if (!use_x && !use_y) continue;
        double ex = 0.0, ey = 0.0;
        if (use_x) {
          const std::size_t j = i + hs;
          ex = (pred[j] - pred[i]) - (gt[j] - gt[i]);
        }
        if (use_y) {
          const std::size_t j = i + static_cast<std::size_t>(hs) * w;
          ey = (pred[j] - pred[i]) - (gt[j] - gt[i]);
        }
        const double norm = std::sqrt(ex * ex + ey * ey);
        total += norm;
        if (grad && norm > 0.0) {
          if (use_x) {
            const double d = ex / norm;
            grad[i + hs] += d;
            grad[i] -= d;
          }
          if (use_y) {
            const double d = ey / norm;
            grad[i + static_cast<std::size_t>(hs) * w] += d;
            grad[i] -= d;
          }
        }
      }
  }
  return total;
}

}  // namespace

double l1_loss(const Tensor& pred, const Tensor& gt, const Mask& valid, bool* empty_mask) {
  check_pair(pred, gt, valid);
  double total = 0.0;
  bool any = false;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!valid[i]) continue;
    any = true;
    total += std::abs(pred[i] - gt[i]);
  }
  if (empty_mask) *empty_mask = !any;
  return total;
}

double multiscale_gradient_loss(const Tensor& pred, const Tensor& gt, const Mask& valid,
                                const std::vector<int>& scales) {
  check_pair(pred, gt, valid);
  return msg_eval(pred.data(), gt, valid, scales, nullptr);
}

double total_loss(const std::vector<DepthPair>& preds, const std::vector<SupervisionPair>& gts,
                  const LossConfig& config, double alpha, double max_range) {
  if (preds.size() != gts.size()) throw UsageError("total_loss: misaligned pred/gt lists");
  if (alpha < 0.0) throw UsageError("total_loss: alpha must be non-negative");
  double total = 0.0;
  for (std::size_t t = 0; t < preds.size(); ++t) {
    const DenseDepthGT& gb = *gts[t].begin;
    const DenseDepthGT& ge = *gts[t].end;
    const Tensor gbn = normalize_depth(gb.data, max_range);
    const Tensor gen = normalize_depth(ge.data, max_range);
    total += l1_loss(preds[t].d_bf, gbn, gb.valid) +
             alpha * multiscale_gradient_loss(preds[t].d_bf, gbn, gb.valid, config.scales);
    total += l1_loss(preds[t].d_af, gen, ge.valid) +
             alpha * multiscale_gradient_loss(preds[t].d_af, gen, ge.valid, config.scales);
  }
  return total;
}

nn::NodeRef l1_loss_node(const nn::NodeRef& pred, const Tensor& gt, const Mask& valid) {
  const Tensor& pv = pred->value;
  if (pv.size() != gt.size()) throw UsageError("l1_loss_node: pred/gt size mismatch");
  if (valid.size() != gt.size()) throw UsageError("l1_loss_node: mask size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (valid[i]) total += std::abs(pv[i] - gt[i]);

  auto out = nn::constant(Tensor::scalar(total));
  if (!pred->needs_grad) return out;
  out->needs_grad = true;
  out->parents = {pred};
  // own copies: the closure may outlive the caller's gt/mask
  auto gt_copy = std::make_shared<Tensor>(gt);
  auto valid_copy = std::make_shared<Mask>(valid);
  out->backprop = [pred, gt_copy, valid_copy](nn::Node& node) {
    const double go = node.grad[0];
    Tensor& g = pred->ensure_grad();
    const Tensor& p = pred->value;
    for (std::size_t i = 0; i < gt_copy->size(); ++i) {
      if (!(*valid_copy)[i]) continue;
      const double d = p[i] - (*gt_copy)[i];
      if (d > 0.0)
        g[i] += go;
      else if (d < 0.0)
        g[i] -= go;
    }
  };
  return out;
}

nn::NodeRef msg_loss_node(const nn::NodeRef& pred, const Tensor& gt, const Mask& valid,
                          const std::vector<int>& scales) {
  const Tensor& pv = pred->value;
  if (pv.size() != gt.size()) throw UsageError("msg_loss_node: pred/gt size mismatch");
  if (valid.size() != gt.size()) throw UsageError("msg_loss_node: mask size mismatch");
  const double total = msg_eval(pv.data(), gt, valid, scales, nullptr);
  auto out = nn::constant(Tensor::scalar(total));
  if (!pred->needs_grad) return out;
  out->needs_grad = true;
  out->parents = {pred};
  auto gt_copy = std::make_shared<Tensor>(gt);
  auto valid_copy = std::make_shared<Mask>(valid);
  out->backprop = [pred, gt_copy, valid_copy, scales](nn::Node& node) {
    const double go = node.grad[0];
    Tensor raw(pred->value.shape());
    msg_eval(pred->value.data(), *gt_copy, *valid_copy, scales, raw.data());
    Tensor& g = pred->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += go * raw[i];
  };
  return out;
}

}  // namespace aled
