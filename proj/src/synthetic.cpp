#include "aled/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "aled/errors.hpp"
#include "aled/rng.hpp"

using nlohmann::json;

namespace aled::synth {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kLogFloor = 1e-3;
constexpr double kBackgroundIntensity = 0.3;

double deg2rad(double d) { return d * kPi / 180.0; }

Mat3 rpy_deg_to_matrix(const Vec3& rpy) {
  return rotation_rpy(deg2rad(rpy.x), deg2rad(rpy.y), deg2rad(rpy.z));
}

struct Pose {
  Mat3 R;  // body -> world
  Vec3 t;
  Vec3 to_world(const Vec3& p) const { return R * p + t; }
};

Pose camera_pose(const SceneSpec& spec, double t_s) {
  const auto& traj = spec.trajectory;
  if (traj.empty()) return Pose{};
  if (t_s <= traj.front().t)
    return {rpy_deg_to_matrix(traj.front().rpy_deg), traj.front().pos};
  if (t_s >= traj.back().t) return {rpy_deg_to_matrix(traj.back().rpy_deg), traj.back().pos};
  std::size_t k = 1;
  while (traj[k].t < t_s) ++k;
  const PoseKey& a = traj[k - 1];
  const PoseKey& b = traj[k];
  const double s = (t_s - a.t) / (b.t - a.t);
  Pose pose;
  pose.t = a.pos + (b.pos - a.pos) * s;
  const Quat qa = Quat::from_matrix(rpy_deg_to_matrix(a.rpy_deg));
  const Quat qb = Quat::from_matrix(rpy_deg_to_matrix(b.rpy_deg));
  pose.R = slerp(qa, qb, s).to_matrix();
  return pose;
}

struct Hit {
  double t = -1.0;  // ray parameter; < 0 means miss
  const ObjectSpec* obj = nullptr;
  double u = 0.0, v = 0.0;  // surface coordinates for texturing
};

struct PlaneFrame {
  Mat3 world_to_local;  // R^T
  Vec3 center;
};

/// Precomputed per-object data for the duration of one render.
struct SceneGeometry {
  const SceneSpec* spec = nullptr;
  std::vector<PlaneFrame> plane_frames;

  explicit SceneGeometry(const SceneSpec& s) : spec(&s) {
    plane_frames.reserve(s.objects.size());
    for (const ObjectSpec& o : s.objects) {
      PlaneFrame f;
      if (o.kind == ObjectSpec::Kind::Plane) {
        f.world_to_local = rpy_deg_to_matrix(o.rpy_deg).transposed();
        f.center = o.center;
      }
      plane_frames.push_back(f);
    }
  }

  /// Nearest intersection along origin + t*dir with t > eps.
  Hit trace(const Vec3& origin, const Vec3& dir) const {
    constexpr double kEps = 1e-9;
    Hit best;
    for (std::size_t i = 0; i < spec->objects.size(); ++i) {
      const ObjectSpec& o = spec->objects[i];
      if (o.kind == ObjectSpec::Kind::Plane) {
        const PlaneFrame& f = plane_frames[i];
        const Vec3 ol = f.world_to_local * (origin - f.center);
        const Vec3 dl = f.world_to_local * dir;
        if (std::abs(dl.z) < 1e-12) continue;
        const double t = -ol.z / dl.z;
        if (t <= kEps || (best.t > 0.0 && t >= best.t)) continue;
        const double u = ol.x + t * dl.x;
        const double v = ol.y + t * dl.y;
        if (std::abs(u) > o.extent_w * 0.5 || std::abs(v) > o.extent_h * 0.5) continue;
        best = {t, &o, u, v};
      } else {
        // slab intersection
        double t0 = -1e300, t1 = 1e300;
        bool miss = false;
        const double omin[3] = {o.box_min.x, o.box_min.y, o.box_min.z};
        const double omax[3] = {o.box_max.x, o.box_max.y, o.box_max.z};
        const double org[3] = {origin.x, origin.y, origin.z};
        const double d[3] = {dir.x, dir.y, dir.z};
        for (int a = 0; a < 3 && !miss; ++a) {
          if (std::abs(d[a]) < 1e-12) {
            if (org[a] < omin[a] || org[a] > omax[a]) miss = true;
            continue;
          }
          double ta = (omin[a] - org[a]) / d[a];
          double tb = (omax[a] - org[a]) / d[a];
          if (ta > tb) std::swap(ta, tb);
          t0 = std::max(t0, ta);
          t1 = std::min(t1, tb);
          if (t0 > t1) miss = true;
        }
        if (miss) continue;
        const double t = t0 > kEps ? t0 : t1;
        if (t <= kEps || (best.t > 0.0 && t >= best.t)) continue;
        const Vec3 p = origin + dir * t;
        // texture coordinates from the two dominant axes of the hit face
        double u, v;
        const Vec3 rel = p - o.box_min;
        const double dxm = std::min(std::abs(p.x - o.box_min.x), std::abs(p.x - o.box_max.x));
        const double dym = std::min(std::abs(p.y - o.box_min.y), std::abs(p.y - o.box_max.y));
        const double dzm = std::min(std::abs(p.z - o.box_min.z), std::abs(p.z - o.box_max.z));
        if (dxm <= dym && dxm <= dzm) {
          u = rel.y;
          v = rel.z;
        } else if (dym <= dzm) {
          u = rel.x;
          v = rel.z;
        } else {
          u = rel.x;
          v = rel.y;
        }
        best = {t, &o, u, v};
      }
    }
    return best;
  }

  double intensity(const Hit& hit) const {
    if (hit.t <= 0.0) return kBackgroundIntensity;
    const ObjectSpec& o = *hit.obj;
    double pattern = 0.0;
    switch (o.texture.kind) {
      case TextureSpec::Kind::Constant:
        pattern = 0.0;
        break;
      case TextureSpec::Kind::Checker: {
        const auto cell = [&](double x) {
          return static_cast<long long>(std::floor(x / o.texture.scale));
        };
        pattern = ((cell(hit.u) + cell(hit.v)) % 2 + 2) % 2 == 0 ? 1.0 : -1.0;
        break;
      }
      case TextureSpec::Kind::Sine:
        pattern = std::sin(2.0 * kPi * hit.u / o.texture.scale) *
                  std::sin(2.0 * kPi * hit.v / o.texture.scale);
        break;
    }
    return o.albedo * (1.0 + o.texture.contrast * pattern);
  }
};

double log_intensity(double intensity) { return std::log(std::max(intensity, kLogFloor)); }

/// Log-intensity image through the camera at time t.
void render_log_intensity(const SceneGeometry& geo, const SceneSpec& spec, double t_s,
                          std::vector<double>& out) {
  const CameraModel& cam = spec.camera;
  const Pose pose = camera_pose(spec, t_s);
  out.resize(static_cast<std::size_t>(cam.height) * cam.width);
  std::size_t i = 0;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x, ++i) {
      const Vec3 dir_cam{(x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0};
      const Hit hit = geo.trace(pose.t, pose.R * dir_cam);
      out[i] = log_intensity(geo.intensity(hit));
    }
}

std::int64_t to_us(double t_s) { return std::llround(t_s * 1e6); }

/// Persistent contrast-threshold sampler: per-pixel reference log intensities
/// carried across windows, events emitted at interpolated crossing times.
class EventSimulator {
 public:
  EventSimulator(const SceneSpec& spec, const SceneGeometry& geo, double t0_s)
      : spec_(&spec), geo_(&geo) {
    render_log_intensity(*geo_, *spec_, t0_s, ref_);
    last_ = ref_;
    last_t_ = t0_s;
  }

  /// Advances to t1 and returns the window's events (time-sorted).
  std::vector<Event> advance(double t1_s, std::int64_t window_t0_us, std::int64_t window_t1_us,
                             Rng* noise_rng) {
    const double theta = spec_->events.threshold;
    const int substeps = std::max(1, spec_->events.substeps);
    const double t0_s = last_t_;
    std::vector<Event> events;
    std::vector<double> current;
    for (int k = 1; k <= substeps; ++k) {
      const double tk = t0_s + (t1_s - t0_s) * k / substeps;
      render_log_intensity(*geo_, *spec_, tk, current);
      const double tk_prev = t0_s + (t1_s - t0_s) * (k - 1) / substeps;
      std::size_t i = 0;
      for (int y = 0; y < spec_->camera.height; ++y)
        for (int x = 0; x < spec_->camera.width; ++x, ++i) {
          double delta = current[i] - ref_[i];
          while (std::abs(delta) >= theta) {
            const double sign = delta > 0.0 ? 1.0 : -1.0;
            ref_[i] += sign * theta;
            const double span = current[i] - last_[i];
            double frac = span != 0.0 ? (ref_[i] - last_[i]) / span : 1.0;
            frac = std::clamp(frac, 0.0, 1.0);
            const double te = tk_prev + (tk - tk_prev) * frac;
            Event e;
            e.x = x;
            e.y = y;
            e.t = std::clamp(to_us(te), window_t0_us, window_t1_us);
            e.p = sign > 0.0 ? 1 : -1;
            events.push_back(e);
            delta = current[i] - ref_[i];
          }
        }
      last_ = current;
    }
    last_t_ = t1_s;

    if (noise_rng && spec_->events.noise_rate > 0.0) {
      const double p_event = spec_->events.noise_rate * (t1_s - t0_s);
      std::size_t i = 0;
      for (int y = 0; y < spec_->camera.height; ++y)
        for (int x = 0; x < spec_->camera.width; ++x, ++i)
          if (noise_rng->bernoulli(std::min(1.0, p_event))) {
            Event e;
            e.x = x;
            e.y = y;
            e.t = window_t0_us +
                  noise_rng->uniform_int(
                      static_cast<int>(std::max<std::int64_t>(1, window_t1_us - window_t0_us)));
            e.p = noise_rng->bernoulli(0.5) ? 1 : -1;
            events.push_back(e);
          }
    }

    std::stable_sort(events.begin(), events.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
    return events;
  }

 private:
  const SceneSpec* spec_;
  const SceneGeometry* geo_;
  std::vector<double> ref_;   // per-pixel reference level
  std::vector<double> last_;  // log intensity at the previous substep
  double last_t_ = 0.0;
};

}  // namespace

void SceneSpec::validate() const {
  camera.validate();
  if (!(duration_s > 0.0)) throw UsageError("scene: duration must be positive");
  if (!(gt_rate_hz > 0.0)) throw UsageError("scene: gt_rate_hz must be positive");
  if (!(lidar.rate_hz > 0.0)) throw UsageError("scene: lidar rate must be positive");
  if (lidar.channels < 1 || lidar.azimuth_steps < 1)
    throw UsageError("scene: lidar needs at least one channel and azimuth step");
  if (!(events.threshold > 0.0)) throw UsageError("scene: event threshold must be positive");
  if (events.substeps < 8) throw UsageError("scene: events.substeps must be >= 8");
  if (events.noise_rate < 0.0) throw UsageError("scene: noise rate must be non-negative");
  if (trajectory.empty()) throw UsageError("scene: trajectory needs at least one pose");
  for (std::size_t i = 1; i < trajectory.size(); ++i)
    if (!(trajectory[i].t > trajectory[i - 1].t))
      throw UsageError("scene: trajectory timestamps must increase");
  for (const ObjectSpec& o : objects) {
    if (o.kind == ObjectSpec::Kind::Plane && (!(o.extent_w > 0.0) || !(o.extent_h > 0.0)))
      throw UsageError("scene: plane extent must be positive");
    if (o.kind == ObjectSpec::Kind::Box &&
        (!(o.box_max.x > o.box_min.x) || !(o.box_max.y > o.box_min.y) ||
         !(o.box_max.z > o.box_min.z)))
      throw UsageError("scene: box bounds must be ordered");
    if (o.texture.contrast < 0.0 || o.texture.contrast >= 1.0)
      throw UsageError("scene: texture contrast must be in [0, 1)");
    if (!(o.texture.scale > 0.0)) throw UsageError("scene: texture scale must be positive");
    if (!(o.albedo > 0.0)) throw UsageError("scene: albedo must be positive");
  }
}

SceneSpec default_scene() {
  SceneSpec spec;
  spec.seed = 1;
  spec.duration_s = 1.0;

  spec.camera.fx = 110.0;
  spec.camera.fy = 110.0;
  spec.camera.cx = 63.5;
  spec.camera.cy = 47.5;
  spec.camera.width = 128;
  spec.camera.height = 96;
  spec.camera.max_range = 20.0;
  // LiDAR frame: x forward, y left, z up; co-located with the camera.
  spec.camera.T_cam_lidar.R.m = {0, -1, 0, 0, 0, -1, 1, 0, 0};
  spec.camera.T_cam_lidar.t = {0.0, 0.0, 0.0};

  spec.lidar = LidarSpec{};
  spec.events = EventSpec{};
  spec.gt_rate_hz = 20.0;

  spec.trajectory = {
      {0.0, {0.0, 0.0, 0.0}, {0.0, 0.0, 0.0}},
      {1.0, {0.25, 0.05, 0.35}, {0.0, 0.0, 2.0}},
  };

  ObjectSpec wall;
  wall.kind = ObjectSpec::Kind::Plane;
  wall.center = {0.0, 0.0, 12.0};
  wall.rpy_deg = {0.0, 0.0, 0.0};
  wall.extent_w = 60.0;
  wall.extent_h = 40.0;
  wall.texture = {TextureSpec::Kind::Checker, 1.5, 0.7};
  wall.albedo = 0.7;

  // Ramp from below the image up to the wall; its surface meets the wall at
  // z = 12 so depth stays continuous across the whole LiDAR band.
  ObjectSpec ramp;
  ramp.kind = ObjectSpec::Kind::Plane;
  // plane satisfying y = 6.6 - 0.5333 z, i.e. normal ~ (0, 3, 1.6)
  ramp.center = {0.0, 1.5, 9.5625};
  {
    // roll local z onto the surface normal (0, 3, 1.6)/|.|
    const double tilt_deg = std::atan2(1.6, 3.0) * 180.0 / kPi;
    ramp.rpy_deg = {-(90.0 - tilt_deg), 0.0, 0.0};
  }
  ramp.extent_w = 40.0;
  ramp.extent_h = 8.0;
  ramp.texture = {TextureSpec::Kind::Sine, 0.8, 0.8};
  ramp.albedo = 0.55;

  // Near objects kept outside the LiDAR elevation band (they only produce
  // events and ground-truth depth changes).
  ObjectSpec box;
  box.kind = ObjectSpec::Kind::Box;
  box.box_min = {-1.1, -2.0, 4.5};
  box.box_max = {0.3, -1.78, 5.3};
  box.texture = {TextureSpec::Kind::Checker, 0.25, 0.85};
  box.albedo = 0.85;

  ObjectSpec plate;
  plate.kind = ObjectSpec::Kind::Plane;
  plate.center = {0.3, 1.89, 4.7};
  plate.rpy_deg = {0.0, 0.0, 0.0};
  plate.extent_w = 1.4;
  plate.extent_h = 0.22;
  plate.texture = {TextureSpec::Kind::Sine, 0.3, 0.85};
  plate.albedo = 0.4;

  spec.objects = {wall, ramp, box, plate};
  return spec;
}

namespace {

json vec3_to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Vec3 vec3_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) throw DataError("scene: expected a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

std::string texture_kind_name(TextureSpec::Kind k) {
  switch (k) {
    case TextureSpec::Kind::Constant: return "constant";
    case TextureSpec::Kind::Checker: return "checker";
    case TextureSpec::Kind::Sine: return "sine";
  }
  return "constant";
}

TextureSpec::Kind texture_kind_from(const std::string& s) {
  if (s == "constant") return TextureSpec::Kind::Constant;
  if (s == "checker") return TextureSpec::Kind::Checker;
  if (s == "sine") return TextureSpec::Kind::Sine;
  throw DataError("scene: unknown texture kind '" + s + "'");
}

}  // namespace

std::string scene_to_json(const SceneSpec& spec) {
  json j;
  j["seed"] = spec.seed;
  j["duration_s"] = spec.duration_s;
  j["gt_rate_hz"] = spec.gt_rate_hz;
  j["camera"] = {{"fx", spec.camera.fx},       {"fy", spec.camera.fy},
                 {"cx", spec.camera.cx},       {"cy", spec.camera.cy},
                 {"width", spec.camera.width}, {"height", spec.camera.height},
                 {"max_range", spec.camera.max_range}};
  j["camera"]["T_cam_lidar"] = {
      {"R", std::vector<double>(spec.camera.T_cam_lidar.R.m.begin(),
                                spec.camera.T_cam_lidar.R.m.end())},
      {"t", std::vector<double>{spec.camera.T_cam_lidar.t.x, spec.camera.T_cam_lidar.t.y,
                                spec.camera.T_cam_lidar.t.z}}};
  j["lidar"] = {{"channels", spec.lidar.channels},
                {"vfov_deg", spec.lidar.vfov_deg},
                {"hfov_deg", spec.lidar.hfov_deg},
                {"azimuth_steps", spec.lidar.azimuth_steps},
                {"rate_hz", spec.lidar.rate_hz}};
  j["events"] = {{"threshold", spec.events.threshold},
                 {"substeps", spec.events.substeps},
                 {"noise_rate", spec.events.noise_rate}};
  json traj = json::array();
  for (const PoseKey& k : spec.trajectory)
    traj.push_back({{"t", k.t}, {"pos", vec3_to_json(k.pos)}, {"rpy_deg", vec3_to_json(k.rpy_deg)}});
  j["trajectory"] = std::move(traj);
  json objs = json::array();
  for (const ObjectSpec& o : spec.objects) {
    json jo;
    jo["texture"] = {{"kind", texture_kind_name(o.texture.kind)},
                     {"scale", o.texture.scale},
                     {"contrast", o.texture.contrast}};
    jo["albedo"] = o.albedo;
    if (o.kind == ObjectSpec::Kind::Plane) {
      jo["type"] = "plane";
      jo["center"] = vec3_to_json(o.center);
      jo["rpy_deg"] = vec3_to_json(o.rpy_deg);
      jo["extent"] = json::array({o.extent_w, o.extent_h});
    } else {
      jo["type"] = "box";
      jo["min"] = vec3_to_json(o.box_min);
      jo["max"] = vec3_to_json(o.box_max);
    }
    objs.push_back(std::move(jo));
  }
  j["objects"] = std::move(objs);
  return j.dump(2) + "\n";
}

SceneSpec scene_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("scene: invalid JSON: ") + e.what());
  }
  try {
    SceneSpec spec;
    spec.seed = j.value("seed", std::uint64_t{1});
    spec.duration_s = j.at("duration_s").get<double>();
    spec.gt_rate_hz = j.at("gt_rate_hz").get<double>();

    const json& jc = j.at("camera");
    spec.camera.fx = jc.at("fx").get<double>();
    spec.camera.fy = jc.at("fy").get<double>();
    spec.camera.cx = jc.at("cx").get<double>();
    spec.camera.cy = jc.at("cy").get<double>();
    spec.camera.width = jc.at("width").get<int>();
    spec.camera.height = jc.at("height").get<int>();
    spec.camera.max_range = jc.at("max_range").get<double>();
    const json& jt = jc.at("T_cam_lidar");
    const auto r = jt.at("R").get<std::vector<double>>();
    const auto t = jt.at("t").get<std::vector<double>>();
    if (r.size() != 9 || t.size() != 3) throw DataError("scene: bad T_cam_lidar");
    std::copy(r.begin(), r.end(), spec.camera.T_cam_lidar.R.m.begin());
    spec.camera.T_cam_lidar.t = {t[0], t[1], t[2]};

    if (j.contains("lidar")) {
      const json& jl = j.at("lidar");
      spec.lidar.channels = jl.value("channels", spec.lidar.channels);
      spec.lidar.vfov_deg = jl.value("vfov_deg", spec.lidar.vfov_deg);
      spec.lidar.hfov_deg = jl.value("hfov_deg", spec.lidar.hfov_deg);
      spec.lidar.azimuth_steps = jl.value("azimuth_steps", spec.lidar.azimuth_steps);
      spec.lidar.rate_hz = jl.value("rate_hz", spec.lidar.rate_hz);
    }
    if (j.contains("events")) {
      const json& je = j.at("events");
      spec.events.threshold = je.value("threshold", spec.events.threshold);
      spec.events.substeps = je.value("substeps", spec.events.substeps);
      spec.events.noise_rate = je.value("noise_rate", spec.events.noise_rate);
    }
    for (const json& jk : j.at("trajectory"))
      spec.trajectory.push_back(
          {jk.at("t").get<double>(), vec3_from_json(jk.at("pos")), vec3_from_json(jk.at("rpy_deg"))});
    for (const json& jo : j.value("objects", json::array())) {
      ObjectSpec o;
      const std::string type = jo.at("type").get<std::string>();
      if (jo.contains("texture")) {
        const json& jt2 = jo.at("texture");
        o.texture.kind = texture_kind_from(jt2.value("kind", std::string("constant")));
        o.texture.scale = jt2.value("scale", o.texture.scale);
        o.texture.contrast = jt2.value("contrast", o.texture.contrast);
      }
      o.albedo = jo.value("albedo", o.albedo);
      if (type == "plane") {
        o.kind = ObjectSpec::Kind::Plane;
        o.center = vec3_from_json(jo.at("center"));
        o.rpy_deg = vec3_from_json(jo.at("rpy_deg"));
        const json& je = jo.at("extent");
        o.extent_w = je[0].get<double>();
        o.extent_h = je[1].get<double>();
      } else if (type == "box") {
        o.kind = ObjectSpec::Kind::Box;
        o.box_min = vec3_from_json(jo.at("min"));
        o.box_max = vec3_from_json(jo.at("max"));
      } else {
        throw DataError("scene: unknown object type '" + type + "'");
      }
      spec.objects.push_back(o);
    }
    spec.validate();
    return spec;
  } catch (const json::exception& e) {
    throw DataError(std::string("scene: missing or invalid field: ") + e.what());
  }
}

DenseDepthGT render_depth(const SceneSpec& spec, double t_s) {
  const SceneGeometry geo(spec);
  const CameraModel& cam = spec.camera;
  const Pose pose = camera_pose(spec, t_s);
  DenseDepthGT gt;
  gt.data = Tensor({cam.height, cam.width});
  gt.valid.assign(static_cast<std::size_t>(cam.height) * cam.width, 1);
  gt.t = to_us(t_s);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      // unnormalized direction with unit z: the ray parameter equals camera Z
      const Vec3 dir_cam{(x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0};
      const Hit hit = geo.trace(pose.t, pose.R * dir_cam);
      const double z = hit.t > 0.0 ? std::min(hit.t, cam.max_range) : cam.max_range;
      gt.data.at(y, x) = z;
    }
  return gt;
}

EventWindow render_events(const SceneSpec& spec, double t0_s, double t1_s) {
  if (!(t0_s < t1_s)) throw UsageError("render_events: t0 must precede t1");
  const SceneGeometry geo(spec);
  EventSimulator sim(spec, geo, t0_s);
  EventWindow window;
  window.t_start = to_us(t0_s);
  window.t_end = to_us(t1_s);
  Rng noise(Rng::derive(spec.seed, 0xE0153ULL));
  window.events = sim.advance(t1_s, window.t_start, window.t_end,
                              spec.events.noise_rate > 0.0 ? &noise : nullptr);
  return window;
}

PointCloud render_lidar(const SceneSpec& spec, double t_s) {
  const SceneGeometry geo(spec);
  const Pose cam_pose = camera_pose(spec, t_s);
  // T_world_lidar = T_world_cam * T_cam_lidar
  const RigidTransform world_cam{cam_pose.R, cam_pose.t};
  const RigidTransform world_lidar = world_cam.compose(spec.camera.T_cam_lidar);

  PointCloud cloud;
  cloud.t = to_us(t_s);
  const int C = spec.lidar.channels;
  const int A = spec.lidar.azimuth_steps;
  for (int c = 0; c < C; ++c) {
    const double elev =
        C > 1 ? deg2rad(-spec.lidar.vfov_deg / 2.0 + spec.lidar.vfov_deg * c / (C - 1)) : 0.0;
    for (int a = 0; a < A; ++a) {
      const double azim =
          A > 1 ? deg2rad(-spec.lidar.hfov_deg / 2.0 + spec.lidar.hfov_deg * a / (A - 1)) : 0.0;
      const Vec3 dir_lidar{std::cos(elev) * std::cos(azim), std::cos(elev) * std::sin(azim),
                           std::sin(elev)};
      const Vec3 dir_world = world_lidar.R * dir_lidar;
      const Hit hit = geo.trace(world_lidar.t, dir_world);
      if (hit.t <= 0.0 || hit.t > spec.camera.max_range) continue;  // dir is unit length
      cloud.points.push_back(dir_lidar * hit.t);
    }
  }
  return cloud;
}

SequenceData generate_sequence(const SceneSpec& spec) {
  spec.validate();
  const SceneGeometry geo(spec);

  const std::size_t n_records =
      static_cast<std::size_t>(std::llround(spec.duration_s * spec.gt_rate_hz));
  if (n_records == 0) throw UsageError("generate_sequence: duration too short for the GT rate");

  std::vector<double> bound_s(n_records + 1);
  std::vector<std::int64_t> bound_us(n_records + 1);
  for (std::size_t k = 0; k <= n_records; ++k) {
    bound_s[k] = static_cast<double>(k) / spec.gt_rate_hz;
    bound_us[k] = to_us(bound_s[k]);
  }

  // ground truth shared between adjacent windows
  std::vector<DenseDepthGT> gts(n_records + 1);
  for (std::size_t k = 0; k <= n_records; ++k) gts[k] = render_depth(spec, bound_s[k]);

  SequenceData seq;
  seq.name = "seq";
  seq.camera = spec.camera;
  seq.volume_bins = 5;
  seq.records.resize(n_records);

  EventSimulator sim(spec, geo, 0.0);

  for (std::size_t k = 0; k < n_records; ++k) {
    SequenceRecord& rec = seq.records[k];
    rec.window.t_start = bound_us[k];
    rec.window.t_end = bound_us[k + 1];
    // independent noise stream per record, derived from the scene seed
    Rng noise(Rng::derive(spec.seed, 0xE0153ULL, k));
    Rng* noise_ptr = spec.events.noise_rate > 0.0 ? &noise : nullptr;
    rec.window.events = sim.advance(bound_s[k + 1], bound_us[k], bound_us[k + 1], noise_ptr);
    rec.gt_begin = gts[k];
    rec.gt_begin.t = bound_us[k];
    rec.gt_end = gts[k + 1];
    rec.gt_end.t = bound_us[k + 1];
  }

  // one scan per LiDAR period, attached to the window containing it
  for (std::size_t j = 0;; ++j) {
    const double ts = static_cast<double>(j) / spec.lidar.rate_hz;
    if (ts >= spec.duration_s) break;
    const std::int64_t tu = to_us(ts);
    std::size_t k = 0;
    while (k + 1 < n_records && tu >= bound_us[k + 1]) ++k;
    PointCloud cloud = render_lidar(spec, ts);
    cloud.t = tu;
    seq.records[k].lidar = std::move(cloud);
  }
  return seq;
}

GenStats generate_dataset(const SceneSpec& spec, const std::filesystem::path& out_dir) {
  SequenceData seq = generate_sequence(spec);
  seq.name = out_dir.filename().string();
  write_sequence(out_dir, seq);
  std::ofstream f(out_dir / "scene.json", std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write scene spec next to the sequence");
  f << scene_to_json(spec);

  GenStats stats;
  stats.records = seq.records.size();
  for (const SequenceRecord& r : seq.records) {
    stats.events += r.window.events.size();
    if (r.lidar) ++stats.scans;
  }
  return stats;
}

}  // namespace aled::synth
