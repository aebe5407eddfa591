#include "aled/representations.hpp"

#include <algorithm>
#include <cmath>

#include "aled/errors.hpp"

namespace aled {

EventVolume build_event_volume(const EventWindow& window, int bins, int height, int width) {
  if (bins < 1) throw UsageError("build_event_volume: bins must be >= 1");
  if (window.t_start > window.t_end) throw UsageError("build_event_volume: invalid window");
  EventVolume vol;
  vol.bins = bins;
  vol.data = Tensor({2 * bins, height, width});

  const double span = static_cast<double>(window.t_end - window.t_start);
  const double scale = static_cast<double>(bins - 1);
  for (const Event& e : window.events) {
    if (e.x < 0 || e.x >= width || e.y < 0 || e.y >= height)
      throw UsageError("build_event_volume: event outside sensor bounds");
    if (e.t < window.t_start || e.t > window.t_end)
      throw UsageError("build_event_volume: event timestamp outside window");
    const double offset = static_cast<double>(e.t - window.t_start);
    const int channel_base = e.p < 0 ? 0 : bins;
    for (int b = 0; b < bins; ++b) {
      // |b - t*| expressed with the exact integer numerator |b*span - scale*offset|
      // so that time reversal maps bin b to bin B-1-b bit-exactly.
      double weight;
      if (span > 0.0) {
        const double num = std::abs(static_cast<double>(b) * span - scale * offset);
        weight = std::max(0.0, 1.0 - num / span);
      } else {
        weight = b == 0 ? 1.0 : 0.0;  // degenerate window: t* = 0
      }
      if (weight > 0.0) vol.data.at(channel_base + b, e.y, e.x) += weight;
    }
  }
  return vol;
}

SparseDepthImage project_lidar(const PointCloud& cloud, const CameraModel& model) {
  model.validate();
  SparseDepthImage img;
  img.data = Tensor({model.height, model.width});
  for (const Vec3& p : cloud.points) {
    const Vec3 pc = model.T_cam_lidar.apply(p);
    if (!(pc.z > 0.0) || pc.z > model.max_range) continue;
    const double u = model.fx * pc.x / pc.z + model.cx;
    const double v = model.fy * pc.y / pc.z + model.cy;
    const long xi = std::lround(u);
    const long yi = std::lround(v);
    if (xi < 0 || xi >= model.width || yi < 0 || yi >= model.height) continue;
    double& cell = img.data.at(static_cast<int>(yi), static_cast<int>(xi));
    if (cell == 0.0 || pc.z < cell) cell = pc.z;
  }
  return img;
}

Tensor normalize_depth(const Tensor& meters, double max_range) {
  if (!(max_range > 0.0)) throw UsageError("normalize_depth: max_range must be positive");
  Tensor out(meters.shape());
  for (std::size_t i = 0; i < meters.size(); ++i) out[i] = meters[i] / max_range;
  return out;
}

Tensor denormalize_depth(const Tensor& normalized, double max_range) {
  if (!(max_range > 0.0)) throw UsageError("denormalize_depth: max_range must be positive");
  Tensor out(normalized.shape());
  for (std::size_t i = 0; i < normalized.size(); ++i)
    out[i] = std::clamp(normalized[i] * max_range, 0.0, max_range);
  return out;
}

}  // namespace aled
