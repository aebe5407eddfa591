#include "aled/core_types.hpp"

#include <cmath>
#include <string>

#include "aled/errors.hpp"

namespace aled {

void CameraModel::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw UsageError("CameraModel: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw UsageError("CameraModel: resolution must be positive");
  if (!(max_range > 0.0)) throw UsageError("CameraModel: max_range must be positive");
  if (!T_cam_lidar.R.is_rotation())
    throw UsageError("CameraModel: T_cam_lidar rotation is not orthonormal with det +1");
  if (!T_cam_lidar.t.finite()) throw UsageError("CameraModel: T_cam_lidar translation not finite");
}

namespace {

void check_gt(const DenseDepthGT& gt, const CameraModel& model, int rec, const char* which,
              std::int64_t expect_t, std::vector<Violation>& out) {
  if (gt.data.rank() != 2 || gt.data.h() != model.height || gt.data.w() != model.width)
    out.push_back({rec, std::string(which) + ": depth shape does not match sensor resolution"});
  if (gt.valid.size() != gt.data.size())
    out.push_back({rec, std::string(which) + ": validity mask size mismatch"});
  if (gt.t != expect_t)
    out.push_back({rec, std::string(which) + ": timestamp " + std::to_string(gt.t) +
                            " does not match window bound " + std::to_string(expect_t)});
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    if (!std::isfinite(gt.data[i])) {
      out.push_back({rec, std::string(which) + ": non-finite depth value"});
      break;
    }
  }
}

}  // namespace

std::vector<Violation> validate_sequence(std::span<const SequenceRecord> records,
                                         const CameraModel& model) {
  std::vector<Violation> out;
  for (std::size_t r = 0; r < records.size(); ++r) {
    const int rec = static_cast<int>(r);
    const SequenceRecord& s = records[r];
    const EventWindow& w = s.window;
    if (w.t_start > w.t_end) out.push_back({rec, "window: t_start > t_end"});
    std::int64_t prev_t = w.t_start;
    bool mono_reported = false, bounds_reported = false, range_reported = false;
    for (const Event& e : w.events) {
      if (e.x < 0 || e.x >= model.width || e.y < 0 || e.y >= model.height) {
        if (!bounds_reported)
          out.push_back({rec, "event at (" + std::to_string(e.x) + "," + std::to_string(e.y) +
                                  ") outside sensor bounds"});
        bounds_reported = true;
      }
      if (e.t < prev_t && !mono_reported) {
        out.push_back({rec, "event timestamps not non-decreasing"});
        mono_reported = true;
      }
      prev_t = e.t;
      if ((e.t < w.t_start || e.t > w.t_end) && !range_reported) {
        out.push_back({rec, "event timestamp outside window bounds"});
        range_reported = true;
      }
      if (e.p != 1 && e.p != -1) {
        out.push_back({rec, "event polarity not in {+1,-1}"});
        break;
      }
    }
    if (s.lidar) {
      for (const Vec3& p : s.lidar->points) {
        if (!p.finite()) {
          out.push_back({rec, "lidar point with non-finite coordinates"});
          break;
        }
      }
    }
    check_gt(s.gt_begin, model, rec, "gt_begin", w.t_start, out);
    check_gt(s.gt_end, model, rec, "gt_end", w.t_end, out);
  }
  return out;
}

std::pair<EventWindow, EventWindow> split_window(const EventWindow& w, std::int64_t t_mid) {
  if (t_mid < w.t_start || t_mid > w.t_end)
    throw UsageError("split_window: split time outside window");
  EventWindow a, b;
  a.t_start = w.t_start;
  a.t_end = t_mid;
  b.t_start = t_mid;
  b.t_end = w.t_end;
  for (const Event& e : w.events) (e.t <= t_mid ? a : b).events.push_back(e);
  return {std::move(a), std::move(b)};
}

EventWindow merge_windows(const EventWindow& a, const EventWindow& b) {
  if (a.t_end != b.t_start) throw UsageError("merge_windows: windows are not adjacent");
  EventWindow out;
  out.t_start = a.t_start;
  out.t_end = b.t_end;
  out.events = a.events;
  out.events.insert(out.events.end(), b.events.begin(), b.events.end());
  return out;
}

}  // namespace aled
