#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "aled/core_types.hpp"
#include "aled/nn.hpp"

namespace aled {

/// Channel plan of the fusion network. The reference configuration
/// (base_channels = 32, bins = 5) sizes the encoders 32/64/128/256 and the
/// recurrent states 64/128/256/256, about 24 M trainable parameters.
struct NetworkConfig {
  int base_channels = 32;
  int bins = 5;

  int head_channels() const { return base_channels; }
  /// Encoder output width at scale index s in {0:1/1, 1:1/2, 2:1/4, 3:1/8}.
  int encoder_channels(int s) const { return base_channels << s; }
  /// Recurrent state width at scale index s. The 1/8 state has no guide half.
  int state_channels(int s) const { return s < 3 ? base_channels << (s + 1) : base_channels << 3; }

  void validate() const;
  bool operator==(const NetworkConfig&) const = default;
};

/// The four shared recurrent states. Entries stay in (-1, 1).
struct NetworkState {
  Tensor s1;  // (2b,  H,   W)
  Tensor s2;  // (4b,  H/2, W/2)
  Tensor s3;  // (8b,  H/4, W/4)
  Tensor s4;  // (8b,  H/8, W/8)
};

/// Serialized model/trainer snapshot. The parameter blob is keyed by the
/// canonical layer names (documented in the README) so the weights can be
/// cross-loaded by other implementations.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  NetworkConfig config;
  std::int64_t step = 0;
  int epoch = 0;
  int batch_in_epoch = 0;
  std::vector<std::pair<std::string, Tensor>> params;

  bool has_adam = false;
  std::int64_t adam_t = 0;
  std::vector<Tensor> adam_m, adam_v;  // aligned with params
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Refuses files whose format-version tag does not match kVersion.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Recurrent LiDAR/event fusion network: two encoding branches writing into
/// the shared multi-scale convGRU states, and a decoder with state-guided
/// convex upsampling emitting the normalized (d_bf, d_af) pair.
class AledNet {
 public:
  AledNet(const NetworkConfig& cfg, std::uint64_t seed);

  const NetworkConfig& config() const { return cfg_; }
  std::int64_t param_count() const;

  /// All-zero states for an input resolution divisible by 8.
  NetworkState init_state(int height, int width) const;

  /// One LiDAR update: the normalized sparse depth image (h, w) drives the
  /// LiDAR branch; all four states are refreshed functionally.
  NetworkState encode_lidar(const Tensor& lidar_norm, const NetworkState& state) const;

  /// One event update from a (2*bins, h, w) volume.
  NetworkState encode_events(const Tensor& volume, const NetworkState& state) const;

  /// Decodes the current states into the normalized two-channel prediction.
  /// No output clamping is applied here.
  DepthPair decode(const NetworkState& state) const;

  /// Optional LiDAR update, then the event update, then decode.
  std::pair<DepthPair, NetworkState> forward_step(const Tensor* lidar_norm, const Tensor& volume,
                                                  const NetworkState& state) const;

  // ---- graph-level interface (training keeps the tape alive) ----
  struct StateNodes {
    nn::NodeRef s1, s2, s3, s4;
  };
  StateNodes wrap(const NetworkState& s) const;
  NetworkState unwrap(const StateNodes& s) const;
  StateNodes detach(const StateNodes& s) const;
  StateNodes encode_lidar_nodes(const nn::NodeRef& input, const StateNodes& state) const;
  StateNodes encode_events_nodes(const nn::NodeRef& input, const StateNodes& state) const;
  /// Returns the (2, h, w) prediction node.
  nn::NodeRef decode_nodes(const StateNodes& state) const;

  struct Param {
    std::string name;
    nn::NodeRef node;
  };
  const std::vector<Param>& params() const { return params_; }

  Checkpoint to_checkpoint() const;
  /// Loads parameters by name; shapes must match the current configuration.
  void load_params(const Checkpoint& ckpt);
  static AledNet from_checkpoint(const Checkpoint& ckpt);

 private:
  struct Layers;
  void check_state(const NetworkState& s) const;

  NetworkConfig cfg_;
  std::vector<Param> params_;
  std::shared_ptr<Layers> layers_;
};

}  // namespace aled
