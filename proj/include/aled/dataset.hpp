#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "aled/core_types.hpp"

namespace aled {

/// One on-disk sequence: calibration plus the aligned records.
struct SequenceData {
  std::string name;
  CameraModel camera;
  int volume_bins = 5;  // B recorded in meta.json
  std::vector<SequenceRecord> records;
};

/// Writes the sequence directory layout:
///   meta.json    resolution, bins, max_range, per-record timestamps/offsets
///   calib.json   CameraModel fields
///   events.bin   packed little-endian records (x u16, y u16, t i64, p i8, pad u8)
///   lidar/<index>.bin          float32 LE X,Y,Z triples (only for records with a scan)
///   depth/<index>_begin.bin    float32 LE row-major H*W, NaN marks invalid pixels
///   depth/<index>_end.bin
/// The parent of `dir` must already exist.
void write_sequence(const std::filesystem::path& dir, const SequenceData& seq);

/// Reads a sequence directory back; throws DataError naming the offending file
/// on any missing, truncated, or inconsistent content.
SequenceData read_sequence(const std::filesystem::path& dir);

/// Lists sequence directories under `root`, sorted by name. A directory that
/// itself contains meta.json counts as a single-sequence root.
std::vector<std::filesystem::path> find_sequences(const std::filesystem::path& root);

}  // namespace aled
