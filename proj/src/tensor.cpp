#include "aled/tensor.hpp"

#include <cmath>

#include "aled/errors.hpp"

namespace aled {

Tensor flip_horizontal(const Tensor& t) {
  if (t.rank() != 2 && t.rank() != 3) throw UsageError("flip_horizontal: rank-2 or rank-3 tensor expected");
  Tensor out(t.shape());
  const int c = t.c(), h = t.h(), w = t.w();
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t src = (static_cast<std::size_t>(ci) * h + y) * w + x;
        const std::size_t dst = (static_cast<std::size_t>(ci) * h + y) * w + (w - 1 - x);
        out[dst] = t[src];
      }
  return out;
}

Tensor crop2d(const Tensor& t, int y0, int x0, int ch, int cw) {
  if (t.rank() != 2) throw UsageError("crop2d: rank-2 tensor expected");
  if (y0 < 0 || x0 < 0 || y0 + ch > t.h() || x0 + cw > t.w())
    throw UsageError("crop2d: window outside tensor bounds");
  Tensor out(std::vector<int>{ch, cw});
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x) out.at(y, x) = t.at(y0 + y, x0 + x);
  return out;
}

bool all_finite(const Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(t[i])) return false;
  return true;
}

}  // namespace aled
