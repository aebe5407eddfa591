#pragma once

#include "aled/core_types.hpp"

namespace aled {

/// Discretizes an event window into a (2*bins, height, width) volume.
///
/// Each event deposits bilinear temporal weights max(0, 1 - |b - t*|) into the
/// integer bins b of its polarity group, where t* = (B-1)(t - t_start) /
/// (t_end - t_start). A degenerate window (t_start == t_end) places all events
/// at t* = 0. Channels [0, B) hold negative polarity, [B, 2B) positive.
EventVolume build_event_volume(const EventWindow& window, int bins, int height, int width);

/// Projects a LiDAR scan onto the camera plane.
///
/// Points are mapped through T_cam_lidar and the pinhole model with
/// nearest-pixel rounding. Points behind the camera (Z <= 0), outside the
/// image, or with depth beyond max_range are dropped; pixels hit by several
/// points keep the lowest depth. Pixels without a point stay 0.
SparseDepthImage project_lidar(const PointCloud& cloud, const CameraModel& model);

/// value / max_range, elementwise.
Tensor normalize_depth(const Tensor& meters, double max_range);

/// value * max_range, clamped to [0, max_range].
Tensor denormalize_depth(const Tensor& normalized, double max_range);

}  // namespace aled
