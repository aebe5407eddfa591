#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "aled/core_types.hpp"
#include "aled/dataset.hpp"

namespace aled::synth {

struct TextureSpec {
  enum class Kind { Constant, Checker, Sine };
  Kind kind = Kind::Constant;
  double scale = 0.5;     // meters per pattern period
  double contrast = 0.8;  // in [0, 1)
};

struct ObjectSpec {
  enum class Kind { Plane, Box };
  Kind kind = Kind::Plane;
  // Plane: finite rectangle, local z is the normal.
  Vec3 center;
  Vec3 rpy_deg;
  double extent_w = 1.0, extent_h = 1.0;
  // Box: axis-aligned, world frame.
  Vec3 box_min, box_max;
  TextureSpec texture;
  double albedo = 0.6;
};

/// Camera pose keyframe; position is interpolated linearly and orientation
/// spherically, giving piecewise-constant velocities.
struct PoseKey {
  double t = 0.0;  // seconds
  Vec3 pos;
  Vec3 rpy_deg;
};

struct LidarSpec {
  int channels = 8;
  double vfov_deg = 30.0;  // full vertical fan, centered on the horizon
  double hfov_deg = 90.0;  // full azimuth fan, centered forward
  int azimuth_steps = 96;
  double rate_hz = 10.0;
};

struct EventSpec {
  double threshold = 0.2;  // log-intensity contrast
  int substeps = 10;       // intensity renders per window, >= 8
  double noise_rate = 0.0;  // uniform background events / pixel / second
};

struct SceneSpec {
  std::uint64_t seed = 1;
  double duration_s = 1.0;
  CameraModel camera;
  LidarSpec lidar;
  EventSpec events;
  double gt_rate_hz = 20.0;
  std::vector<PoseKey> trajectory;
  std::vector<ObjectSpec> objects;

  void validate() const;
};

/// The desk-scale reference scene: a wall, a depth-continuous ramp covering
/// the LiDAR band, and textured near objects above and below the band.
SceneSpec default_scene();

SceneSpec scene_from_json(const std::string& text);
std::string scene_to_json(const SceneSpec& spec);

/// Exact per-pixel depth (camera-frame Z) by ray casting; background and
/// anything farther than max_range saturate at max_range. Full-true mask.
DenseDepthGT render_depth(const SceneSpec& spec, double t_s);

/// Events from log-intensity threshold crossings between t0 and t1, starting
/// from the intensity at t0 (fresh per-pixel references).
EventWindow render_events(const SceneSpec& spec, double t0_s, double t1_s);

/// One scan: channels x azimuth_steps rays; returns hits within max_range in
/// the LiDAR frame.
PointCloud render_lidar(const SceneSpec& spec, double t_s);

/// All records of the sequence, windows tiled at the ground-truth rate, the
/// event simulator running continuously, each scan attached to the window
/// containing its timestamp.
SequenceData generate_sequence(const SceneSpec& spec);

struct GenStats {
  std::size_t records = 0;
  std::size_t events = 0;
  std::size_t scans = 0;
};

/// generate_sequence + the on-disk layout + scene.json beside it.
GenStats generate_dataset(const SceneSpec& spec, const std::filesystem::path& out_dir);

}  // namespace aled::synth
