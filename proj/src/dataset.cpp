#include "aled/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "aled/errors.hpp"
#include "io_bytes.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace aled {
namespace {

using detail::get_f32;
using detail::get_i64;
using detail::get_u16;
using detail::put_f32;
using detail::put_i64;
using detail::put_u16;

constexpr std::size_t kEventRecordBytes = 14;  // x u16, y u16, t i64, p i8, pad u8

void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed: " + path.string());
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + path.string());
  f.seekg(0, std::ios::end);
  const auto n = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(n));
  f.read(reinterpret_cast<char*>(bytes.data()), n);
  if (!f) throw DataError("read failed: " + path.string());
  return bytes;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  f << text;
  if (!f) throw DataError("write failed: " + path.string());
}

json parse_json_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open: " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw DataError("invalid JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

std::vector<std::uint8_t> encode_depth(const DenseDepthGT& gt) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(gt.data.size() * 4);
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    const float v = gt.valid[i] ? static_cast<float>(gt.data[i])
                                : std::numeric_limits<float>::quiet_NaN();
    put_f32(bytes, v);
  }
  return bytes;
}

DenseDepthGT decode_depth(const fs::path& path, int h, int w, std::int64_t t) {
  const auto bytes = read_file(path);
  const std::size_t expect = static_cast<std::size_t>(h) * w * 4;
  if (bytes.size() != expect)
    throw DataError("unexpected size of " + path.string() + ": got " +
                    std::to_string(bytes.size()) + ", want " + std::to_string(expect));
  DenseDepthGT gt;
  gt.data = Tensor({h, w});
  gt.valid.assign(static_cast<std::size_t>(h) * w, 1);
  gt.t = t;
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    const float v = get_f32(bytes.data() + 4 * i);
    if (std::isnan(v)) {
      gt.data[i] = 0.0;
      gt.valid[i] = 0;
    } else {
      gt.data[i] = static_cast<double>(v);
    }
  }
  return gt;
}

json transform_to_json(const RigidTransform& tf) {
  json j;
  j["R"] = std::vector<double>(tf.R.m.begin(), tf.R.m.end());
  j["t"] = std::vector<double>{tf.t.x, tf.t.y, tf.t.z};
  return j;
}

RigidTransform transform_from_json(const json& j, const fs::path& file) {
  try {
    RigidTransform tf;
    const auto r = j.at("R").get<std::vector<double>>();
    const auto t = j.at("t").get<std::vector<double>>();
    if (r.size() != 9 || t.size() != 3) throw DataError("bad transform arrays in " + file.string());
    std::copy(r.begin(), r.end(), tf.R.m.begin());
    tf.t = {t[0], t[1], t[2]};
    return tf;
  } catch (const json::exception& e) {
    throw DataError("invalid transform in " + file.string() + ": " + e.what());
  }
}

}  // namespace

void write_sequence(const fs::path& dir, const SequenceData& seq) {
  seq.camera.validate();
  if (!dir.parent_path().empty() && !fs::exists(dir.parent_path()))
    throw DataError("parent directory does not exist: " + dir.parent_path().string());
  fs::create_directory(dir);
  fs::create_directory(dir / "lidar");
  fs::create_directory(dir / "depth");

  std::vector<std::uint8_t> events;
  json meta;
  meta["width"] = seq.camera.width;
  meta["height"] = seq.camera.height;
  meta["bins"] = seq.volume_bins;
  meta["max_range"] = seq.camera.max_range;
  meta["record_count"] = seq.records.size();
  json recs = json::array();

  std::size_t event_offset = 0;
  for (std::size_t i = 0; i < seq.records.size(); ++i) {
    const SequenceRecord& rec = seq.records[i];
    for (const Event& e : rec.window.events) {
      put_u16(events, static_cast<std::uint16_t>(e.x));
      put_u16(events, static_cast<std::uint16_t>(e.y));
      put_i64(events, e.t);
      events.push_back(static_cast<std::uint8_t>(static_cast<std::int8_t>(e.p)));
      events.push_back(0);  // pad
    }
    json jr;
    jr["t_start"] = rec.window.t_start;
    jr["t_end"] = rec.window.t_end;
    jr["event_offset"] = event_offset;
    jr["event_count"] = rec.window.events.size();
    jr["lidar"] = rec.lidar.has_value();
    if (rec.lidar) jr["lidar_t"] = rec.lidar->t;
    recs.push_back(jr);
    event_offset += rec.window.events.size();

    if (rec.lidar) {
      std::vector<std::uint8_t> cloud;
      cloud.reserve(rec.lidar->points.size() * 12);
      for (const Vec3& p : rec.lidar->points) {
        put_f32(cloud, static_cast<float>(p.x));
        put_f32(cloud, static_cast<float>(p.y));
        put_f32(cloud, static_cast<float>(p.z));
      }
      write_file(dir / "lidar" / (std::to_string(i) + ".bin"), cloud);
    }
    write_file(dir / "depth" / (std::to_string(i) + "_begin.bin"), encode_depth(rec.gt_begin));
    write_file(dir / "depth" / (std::to_string(i) + "_end.bin"), encode_depth(rec.gt_end));
  }
  meta["records"] = std::move(recs);
  write_file(dir / "events.bin", events);

  json calib;
  calib["fx"] = seq.camera.fx;
  calib["fy"] = seq.camera.fy;
  calib["cx"] = seq.camera.cx;
  calib["cy"] = seq.camera.cy;
  calib["width"] = seq.camera.width;
  calib["height"] = seq.camera.height;
  calib["max_range"] = seq.camera.max_range;
  calib["T_cam_lidar"] = transform_to_json(seq.camera.T_cam_lidar);

  write_text(dir / "calib.json", calib.dump(2) + "\n");
  write_text(dir / "meta.json", meta.dump(2) + "\n");
}

SequenceData read_sequence(const fs::path& dir) {
  const fs::path meta_path = dir / "meta.json";
  const fs::path calib_path = dir / "calib.json";
  const json meta = parse_json_file(meta_path);
  const json calib = parse_json_file(calib_path);

  SequenceData seq;
  seq.name = dir.filename().string();
  try {
    seq.camera.fx = calib.at("fx").get<double>();
    seq.camera.fy = calib.at("fy").get<double>();
    seq.camera.cx = calib.at("cx").get<double>();
    seq.camera.cy = calib.at("cy").get<double>();
    seq.camera.width = calib.at("width").get<int>();
    seq.camera.height = calib.at("height").get<int>();
    seq.camera.max_range = calib.at("max_range").get<double>();
    seq.camera.T_cam_lidar = transform_from_json(calib.at("T_cam_lidar"), calib_path);
  } catch (const json::exception& e) {
    throw DataError("invalid calibration in " + calib_path.string() + ": " + e.what());
  }
  seq.camera.validate();

  int width = 0, height = 0;
  std::size_t record_count = 0;
  json recs;
  try {
    width = meta.at("width").get<int>();
    height = meta.at("height").get<int>();
    seq.volume_bins = meta.at("bins").get<int>();
    record_count = meta.at("record_count").get<std::size_t>();
    recs = meta.at("records");
  } catch (const json::exception& e) {
    throw DataError("invalid metadata in " + meta_path.string() + ": " + e.what());
  }
  if (width != seq.camera.width || height != seq.camera.height)
    throw DataError("resolution mismatch between " + meta_path.string() + " and calib.json");
  if (recs.size() != record_count)
    throw DataError("record_count does not match records array in " + meta_path.string());

  const fs::path events_path = dir / "events.bin";
  const auto event_bytes = read_file(events_path);
  if (event_bytes.size() % kEventRecordBytes != 0)
    throw DataError("truncated event file: " + events_path.string());
  const std::size_t total_events = event_bytes.size() / kEventRecordBytes;

  seq.records.reserve(record_count);
  for (std::size_t i = 0; i < record_count; ++i) {
    const json& jr = recs[i];
    SequenceRecord rec;
    std::size_t offset = 0, count = 0;
    bool has_lidar = false;
    try {
      rec.window.t_start = jr.at("t_start").get<std::int64_t>();
      rec.window.t_end = jr.at("t_end").get<std::int64_t>();
      offset = jr.at("event_offset").get<std::size_t>();
      count = jr.at("event_count").get<std::size_t>();
      has_lidar = jr.at("lidar").get<bool>();
    } catch (const json::exception& e) {
      throw DataError("invalid record " + std::to_string(i) + " in " + meta_path.string() + ": " +
                      e.what());
    }
    if (offset + count > total_events)
      throw DataError("record " + std::to_string(i) + " points past the end of " +
                      events_path.string());
    rec.window.events.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
      const std::uint8_t* p = event_bytes.data() + (offset + k) * kEventRecordBytes;
      Event e;
      e.x = get_u16(p);
      e.y = get_u16(p + 2);
      e.t = get_i64(p + 4);
      e.p = static_cast<std::int8_t>(p[12]);
      rec.window.events.push_back(e);
    }
    if (has_lidar) {
      const fs::path cloud_path = dir / "lidar" / (std::to_string(i) + ".bin");
      const auto cloud_bytes = read_file(cloud_path);
      if (cloud_bytes.size() % 12 != 0)
        throw DataError("truncated point cloud: " + cloud_path.string());
      PointCloud cloud;
      cloud.t = jr.value("lidar_t", rec.window.t_start);
      const std::size_t npts = cloud_bytes.size() / 12;
      cloud.points.reserve(npts);
      for (std::size_t k = 0; k < npts; ++k) {
        const std::uint8_t* p = cloud_bytes.data() + 12 * k;
        cloud.points.push_back({static_cast<double>(get_f32(p)),
                                static_cast<double>(get_f32(p + 4)),
                                static_cast<double>(get_f32(p + 8))});
      }
      rec.lidar = std::move(cloud);
    }
    rec.gt_begin = decode_depth(dir / "depth" / (std::to_string(i) + "_begin.bin"), height, width,
                                rec.window.t_start);
    rec.gt_end = decode_depth(dir / "depth" / (std::to_string(i) + "_end.bin"), height, width,
                              rec.window.t_end);
    seq.records.push_back(std::move(rec));
  }
  return seq;
}

std::vector<fs::path> find_sequences(const fs::path& root) {
  if (!fs::exists(root)) throw DataError("data directory does not exist: " + root.string());
  if (fs::exists(root / "meta.json")) return {root};
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && fs::exists(entry.path() / "meta.json"))
      out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DataError("no sequences found under " + root.string());
  return out;
}

}  // namespace aled
