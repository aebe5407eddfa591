#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aled/geometry.hpp"
#include "aled/tensor.hpp"

namespace aled {

/// One asynchronous brightness-change record. Polarity is +1 or -1.
struct Event {
  int x = 0;
  int y = 0;
  std::int64_t t = 0;  // microseconds
  std::int8_t p = 1;
};

/// Time-bounded batch of events with non-decreasing timestamps, all inside
/// [t_start, t_end] (closed interval). May be empty.
struct EventWindow {
  std::vector<Event> events;
  std::int64_t t_start = 0;
  std::int64_t t_end = 0;
};

/// Discretized event tensor of shape (2B, H, W); channels [0, B) hold the
/// negative polarity bins, [B, 2B) the positive ones. All entries >= 0.
struct EventVolume {
  Tensor data;
  int bins = 0;
};

/// LiDAR scan in the LiDAR frame, meters.
struct PointCloud {
  std::vector<Vec3> points;
  std::int64_t t = 0;
};

/// Pinhole camera plus the LiDAR extrinsics and the depth-normalization range.
struct CameraModel {
  double fx = 0.0, fy = 0.0;  // focal lengths, pixels
  double cx = 0.0, cy = 0.0;  // principal point, pixels
  int width = 0, height = 0;
  RigidTransform T_cam_lidar;  // LiDAR frame -> camera frame
  double max_range = 0.0;      // meters

  /// Throws UsageError when any invariant is broken (fx,fy,max_range > 0,
  /// positive resolution, orthonormal extrinsic rotation with det +1).
  void validate() const;
};

/// (H, W) depth image in meters; 0 marks pixels without a measurement.
struct SparseDepthImage {
  Tensor data;
};

/// The two-channel prediction: depths before and after the events, meters.
struct DepthPair {
  Tensor d_bf;
  Tensor d_af;
};

/// Dense ground-truth depth with a validity mask. Invalid pixels hold 0 in
/// `data` and are excluded from every loss and metric.
struct DenseDepthGT {
  Tensor data;  // (H, W) meters
  Mask valid;   // row-major H*W flags
  std::int64_t t = 0;
};

/// One aligned dataset step: an event window, the (optional) LiDAR scan whose
/// timestamp falls inside the window, and ground truth at both window bounds.
struct SequenceRecord {
  EventWindow window;
  std::optional<PointCloud> lidar;
  DenseDepthGT gt_begin;  // gt_begin.t == window.t_start
  DenseDepthGT gt_end;    // gt_end.t == window.t_end
};

struct Violation {
  int record = -1;  // -1: not tied to a specific record
  std::string what;
};

/// Checks every type invariant across a sequence and reports all violations;
/// an empty report means the sequence is valid.
std::vector<Violation> validate_sequence(std::span<const SequenceRecord> records,
                                         const CameraModel& model);

/// Splits at an interior time: events with t <= t_mid go left, the rest right.
/// Merging the two halves back reproduces the original event multiset.
std::pair<EventWindow, EventWindow> split_window(const EventWindow& w, std::int64_t t_mid);
EventWindow merge_windows(const EventWindow& a, const EventWindow& b);

}  // namespace aled
