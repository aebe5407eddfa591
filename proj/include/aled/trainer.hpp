#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "aled/dataset.hpp"
#include "aled/losses.hpp"
#include "aled/network.hpp"
#include "aled/rng.hpp"

namespace aled {

/// Flat "key = value" text, '#' starts a comment. Unknown keys are an error
/// at the consumer.
std::map<std::string, std::string> parse_kv_text(const std::string& text);

struct TrainConfig {
  double learning_rate = 1e-4;  // 1e-5 when fine-tuning
  int batch_size = 4;
  int epochs = 50;  // 5 when fine-tuning
  int crop = 0;     // square crop in pixels; 0 keeps the full frame
  double hflip_prob = 0.5;
  int tbptt_len = 8;  // unroll length T between state detaches
  std::uint64_t seed = 0;
  int base_channels = 32;
  int bins = 5;
  double alpha_warmup = 0.1;
  double alpha_main = 1.0;

  void validate() const;
  NetworkConfig network() const { return {base_channels, bins}; }
};

/// Parses a config file body; refuses unknown keys by name.
TrainConfig parse_train_config(const std::string& text);
std::string train_config_to_kv(const TrainConfig& cfg);

/// One crop origin plus one flip decision, drawn per sequence and applied
/// consistently to every record in it.
struct Augmentation {
  int x0 = 0, y0 = 0;
  int width = 0, height = 0;
  bool hflip = false;
};

Augmentation draw_augmentation(int frame_width, int frame_height, int crop, double hflip_prob,
                               Rng& rng);
/// Crops/flips events and ground truth; the LiDAR cloud passes through
/// untouched (it is projected later with the augmented camera model).
SequenceRecord augment_record(const SequenceRecord& rec, const Augmentation& aug);
/// Shifts the principal point into the crop frame.
CameraModel augment_model(const CameraModel& model, const Augmentation& aug);
/// Projection under augmentation: project with the cropped model, then mirror
/// the image when flipped (keeps fx positive).
SparseDepthImage project_lidar_augmented(const PointCloud& cloud, const CameraModel& cropped,
                                         bool hflip);

class Adam {
 public:
  Adam(std::vector<AledNet::Param> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void step();
  void zero_grad();
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  std::int64_t t() const { return t_; }

  void export_state(Checkpoint& ckpt) const;
  void import_state(const Checkpoint& ckpt);

 private:
  std::vector<AledNet::Param> params_;
  std::vector<Tensor> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

struct EpochReport {
  int epoch = 0;
  int updates = 0;
  double mean_loss = 0.0;
  double seconds = 0.0;
};

/// Called once per optimizer update with the batch-mean loss terms.
using TrainLogFn =
    std::function<void(int epoch, std::int64_t step, double l_pw, double l_msg, double total)>;

struct ResumePoint {
  int epoch = 1;
  int batch_in_epoch = 0;
};

/// Sequence-level training: seeded shuffling and augmentation, the
/// LiDAR-then-events schedule per record, truncated backpropagation with
/// state detaches every tbptt_len steps, one Adam update per batch chunk.
class Trainer {
 public:
  Trainer(AledNet net, const TrainConfig& cfg);

  AledNet& model() { return net_; }
  const AledNet& model() const { return net_; }
  const TrainConfig& config() const { return cfg_; }
  Adam& optimizer() { return adam_; }
  std::int64_t step() const { return step_; }

  /// epoch is 1-based (the gradient-loss weight switches after epoch 1);
  /// start_batch > 0 resumes mid-epoch at a batch boundary.
  EpochReport train_epoch(const std::vector<SequenceData>& dataset, int epoch,
                          const TrainLogFn& log = {}, int start_batch = 0);

  /// Mean per-step loss over the dataset without augmentation or updates.
  double evaluate_loss(const std::vector<SequenceData>& dataset, double alpha) const;

  void save(const std::filesystem::path& path, int epoch, int batch_in_epoch = 0) const;
  static std::pair<Trainer, ResumePoint> load(const std::filesystem::path& path,
                                              const TrainConfig& cfg);

 private:
  AledNet net_;
  TrainConfig cfg_;
  Adam adam_;
  std::int64_t step_ = 0;
};

}  // namespace aled
