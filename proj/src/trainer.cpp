#include "aled/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "aled/errors.hpp"
#include "aled/representations.hpp"

namespace aled {

std::map<std::string, std::string> parse_kv_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  const auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty()) throw UsageError("config line " + std::to_string(lineno) + ": empty key");
    out[key] = val;
  }
  return out;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw UsageError("train config: learning_rate must be positive");
  if (batch_size < 1) throw UsageError("train config: batch_size must be >= 1");
  if (epochs < 1) throw UsageError("train config: epochs must be >= 1");
  if (crop < 0 || (crop > 0 && crop % 8 != 0))
    throw UsageError("train config: crop must be 0 or a positive multiple of 8");
  if (hflip_prob < 0.0 || hflip_prob > 1.0)
    throw UsageError("train config: hflip_prob must be in [0, 1]");
  if (tbptt_len < 1) throw UsageError("train config: tbptt_len must be >= 1");
  if (alpha_warmup < 0.0 || alpha_main < 0.0)
    throw UsageError("train config: alpha weights must be non-negative");
  network().validate();
}

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig cfg;
  for (const auto& [key, val] : parse_kv_text(text)) {
    try {
      if (key == "learning_rate")
        cfg.learning_rate = std::stod(val);
      else if (key == "batch_size")
        cfg.batch_size = std::stoi(val);
      else if (key == "epochs")
        cfg.epochs = std::stoi(val);
      else if (key == "crop")
        cfg.crop = std::stoi(val);
      else if (key == "hflip_prob")
        cfg.hflip_prob = std::stod(val);
      else if (key == "tbptt_len")
        cfg.tbptt_len = std::stoi(val);
      else if (key == "seed")
        cfg.seed = std::stoull(val);
      else if (key == "base_channels")
        cfg.base_channels = std::stoi(val);
      else if (key == "bins")
        cfg.bins = std::stoi(val);
      else if (key == "alpha_warmup")
        cfg.alpha_warmup = std::stod(val);
      else if (key == "alpha_main")
        cfg.alpha_main = std::stod(val);
      else
        throw UsageError("unknown config key: " + key);
    } catch (const std::invalid_argument&) {
      throw UsageError("config key " + key + ": cannot parse value '" + val + "'");
    } catch (const std::out_of_range&) {
      throw UsageError("config key " + key + ": value out of range");
    }
  }
  cfg.validate();
  return cfg;
}

std::string train_config_to_kv(const TrainConfig& cfg) {
  std::ostringstream out;
  char buf[64];
  const auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << "learning_rate = " << num(cfg.learning_rate) << "\n";
  out << "batch_size = " << cfg.batch_size << "\n";
  out << "epochs = " << cfg.epochs << "\n";
  out << "crop = " << cfg.crop << "\n";
  out << "hflip_prob = " << num(cfg.hflip_prob) << "\n";
  out << "tbptt_len = " << cfg.tbptt_len << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "base_channels = " << cfg.base_channels << "\n";
  out << "bins = " << cfg.bins << "\n";
  out << "alpha_warmup = " << num(cfg.alpha_warmup) << "\n";
  out << "alpha_main = " << num(cfg.alpha_main) << "\n";
  return out.str();
}

Augmentation draw_augmentation(int frame_width, int frame_height, int crop, double hflip_prob,
                               Rng& rng) {
  Augmentation aug;
  aug.width = crop > 0 ? crop : frame_width;
  aug.height = crop > 0 ? crop : frame_height;
  if (aug.width > frame_width || aug.height > frame_height)
    throw UsageError("augment: crop larger than the frame");
  aug.x0 = rng.uniform_int(frame_width - aug.width + 1);
  aug.y0 = rng.uniform_int(frame_height - aug.height + 1);
  aug.hflip = rng.bernoulli(hflip_prob);
  return aug;
}

namespace {

DenseDepthGT augment_gt(const DenseDepthGT& gt, const Augmentation& aug) {
  DenseDepthGT out;
  out.t = gt.t;
  out.data = crop2d(gt.data, aug.y0, aug.x0, aug.height, aug.width);
  out.valid.assign(static_cast<std::size_t>(aug.height) * aug.width, 1);
  const int w = gt.data.w();
  for (int y = 0; y < aug.height; ++y)
    for (int x = 0; x < aug.width; ++x)
      out.valid[static_cast<std::size_t>(y) * aug.width + x] =
          gt.valid[static_cast<std::size_t>(aug.y0 + y) * w + (aug.x0 + x)];
  if (aug.hflip) {
    out.data = flip_horizontal(out.data);
    Mask flipped(out.valid.size());
    for (int y = 0; y < aug.height; ++y)
      for (int x = 0; x < aug.width; ++x)
        flipped[static_cast<std::size_t>(y) * aug.width + x] =
            out.valid[static_cast<std::size_t>(y) * aug.width + (aug.width - 1 - x)];
    out.valid = std::move(flipped);
  }
  return out;
}

}  // namespace

SequenceRecord augment_record(const SequenceRecord& rec, const Augmentation& aug) {
  SequenceRecord out;
  out.window.t_start = rec.window.t_start;
  out.window.t_end = rec.window.t_end;
  for (const Event& e : rec.window.events) {
    const int x = e.x - aug.x0, y = e.y - aug.y0;
    if (x < 0 || x >= aug.width || y < 0 || y >= aug.height) continue;
    Event moved = e;
    moved.x = aug.hflip ? aug.width - 1 - x : x;
    moved.y = y;
    out.window.events.push_back(moved);
  }
  out.lidar = rec.lidar;
  out.gt_begin = augment_gt(rec.gt_begin, aug);
  out.gt_end = augment_gt(rec.gt_end, aug);
  return out;
}

CameraModel augment_model(const CameraModel& model, const Augmentation& aug) {
  CameraModel out = model;
  out.cx = model.cx - aug.x0;
  out.cy = model.cy - aug.y0;
  out.width = aug.width;
  out.height = aug.height;
  return out;
}

SparseDepthImage project_lidar_augmented(const PointCloud& cloud, const CameraModel& cropped,
                                         bool hflip) {
  SparseDepthImage img = project_lidar(cloud, cropped);
  if (hflip) img.data = flip_horizontal(img.data);
  return img;
}

Adam::Adam(std::vector<AledNet::Param> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.node->value.shape());
    v_.emplace_back(p.node->value.shape());
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& value = params_[i].node->value;
    const Tensor& grad = params_[i].node->grad;
    const bool has_grad = !grad.empty();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = has_grad ? grad[j] : 0.0;
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
      value[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (const auto& p : params_) p.node->grad = Tensor();
}

void Adam::export_state(Checkpoint& ckpt) const {
  ckpt.has_adam = true;
  ckpt.adam_t = t_;
  ckpt.adam_m = m_;
  ckpt.adam_v = v_;
}

void Adam::import_state(const Checkpoint& ckpt) {
  if (!ckpt.has_adam) throw DataError("checkpoint holds no optimizer state");
  if (ckpt.adam_m.size() != params_.size() || ckpt.adam_v.size() != params_.size())
    throw DataError("optimizer state does not match the parameter set");
  m_ = ckpt.adam_m;
  v_ = ckpt.adam_v;
  t_ = ckpt.adam_t;
}

Trainer::Trainer(AledNet net, const TrainConfig& cfg)
    : net_(std::move(net)), cfg_(cfg), adam_(net_.params(), cfg.learning_rate) {
  cfg_.validate();
  if (!(net_.config() == cfg_.network()))
    throw UsageError("trainer: network configuration does not match the train config");
}

namespace {

struct StepTerms {
  double l_pw = 0.0;
  double l_msg = 0.0;
};

}  // namespace

EpochReport Trainer::train_epoch(const std::vector<SequenceData>& dataset, int epoch,
                                 const TrainLogFn& log, int start_batch) {
  if (dataset.empty()) throw UsageError("train_epoch: empty dataset");
  const auto wall_start = std::chrono::steady_clock::now();
  const double alpha = epoch <= 1 ? cfg_.alpha_warmup : cfg_.alpha_main;
  const LossConfig loss_cfg{cfg_.alpha_warmup, cfg_.alpha_main, {1, 2, 4, 8, 16}};

  // deterministic epoch order
  std::vector<int> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(Rng::derive(cfg_.seed, 0x51F7ULL, static_cast<std::uint64_t>(epoch)));
  for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
    std::swap(order[i], order[shuffle_rng.uniform_int(i + 1)]);

  EpochReport report;
  report.epoch = epoch;
  double loss_sum = 0.0;

  const int nbatches =
      static_cast<int>((order.size() + cfg_.batch_size - 1) / cfg_.batch_size);
  for (int b = 0; b < nbatches; ++b) {
    const int lo = b * cfg_.batch_size;
    const int hi = std::min<int>(lo + cfg_.batch_size, static_cast<int>(order.size()));
    if (b < start_batch) continue;

    // augment every member once per epoch position
    struct Member {
      std::vector<SequenceRecord> records;
      CameraModel model;   // cropped
      bool hflip = false;
      double max_range = 0.0;
      AledNet::StateNodes state;
    };
    std::vector<Member> members;
    for (int pos = lo; pos < hi; ++pos) {
      const SequenceData& seq = dataset[static_cast<std::size_t>(order[pos])];
      if (seq.volume_bins != cfg_.bins)
        throw UsageError("train_epoch: sequence " + seq.name + " was built with B=" +
                         std::to_string(seq.volume_bins) + ", model expects " +
                         std::to_string(cfg_.bins));
      Rng aug_rng(Rng::derive(cfg_.seed ^ 0xA06A06ULL, static_cast<std::uint64_t>(epoch),
                              static_cast<std::uint64_t>(pos)));
      const Augmentation aug = draw_augmentation(seq.camera.width, seq.camera.height, cfg_.crop,
                                                 cfg_.hflip_prob, aug_rng);
      Member m;
      m.model = augment_model(seq.camera, aug);
      m.hflip = aug.hflip;
      m.max_range = seq.camera.max_range;
      m.records.reserve(seq.records.size());
      for (const SequenceRecord& rec : seq.records) m.records.push_back(augment_record(rec, aug));
      m.state = net_.wrap(net_.init_state(aug.height, aug.width));
      members.push_back(std::move(m));
    }

    std::size_t longest = 0;
    for (const Member& m : members) longest = std::max(longest, m.records.size());

    for (std::size_t t0 = 0; t0 < longest; t0 += static_cast<std::size_t>(cfg_.tbptt_len)) {
      nn::NodeRef chunk_loss;
      StepTerms terms;
      for (Member& m : members) {
        const std::size_t t1 =
            std::min(m.records.size(), t0 + static_cast<std::size_t>(cfg_.tbptt_len));
        for (std::size_t t = t0; t < t1; ++t) {
          const SequenceRecord& rec = m.records[t];
          if (rec.lidar) {
            const SparseDepthImage sparse =
                project_lidar_augmented(*rec.lidar, m.model, m.hflip);
            const Tensor lidar_norm = normalize_depth(sparse.data, m.max_range);
            Tensor plane({1, lidar_norm.h(), lidar_norm.w()});
            std::copy(lidar_norm.data(), lidar_norm.data() + lidar_norm.size(), plane.data());
            m.state = net_.encode_lidar_nodes(nn::constant(std::move(plane)), m.state);
          }
          const EventVolume vol =
              build_event_volume(rec.window, cfg_.bins, m.model.height, m.model.width);
          m.state = net_.encode_events_nodes(nn::constant(vol.data), m.state);
          const nn::NodeRef pred = net_.decode_nodes(m.state);
          const nn::NodeRef bf = nn::slice_channels(pred, 0, 1);
          const nn::NodeRef af = nn::slice_channels(pred, 1, 2);

          const Tensor gbn = normalize_depth(rec.gt_begin.data, m.max_range);
          const Tensor gen = normalize_depth(rec.gt_end.data, m.max_range);
          const nn::NodeRef pw_bf = l1_loss_node(bf, gbn, rec.gt_begin.valid);
          const nn::NodeRef pw_af = l1_loss_node(af, gen, rec.gt_end.valid);
          const nn::NodeRef msg_bf = msg_loss_node(bf, gbn, rec.gt_begin.valid, loss_cfg.scales);
          const nn::NodeRef msg_af = msg_loss_node(af, gen, rec.gt_end.valid, loss_cfg.scales);

          terms.l_pw += pw_bf->value[0] + pw_af->value[0];
          terms.l_msg += msg_bf->value[0] + msg_af->value[0];

          nn::NodeRef step_loss = nn::add(
              nn::add(pw_bf, nn::affine(msg_bf, alpha, 0.0)),
              nn::add(pw_af, nn::affine(msg_af, alpha, 0.0)));
          chunk_loss = chunk_loss ? nn::add(chunk_loss, step_loss) : step_loss;
        }
      }
      if (!chunk_loss) continue;

      const nn::NodeRef total =
          nn::affine(chunk_loss, 1.0 / static_cast<double>(members.size()), 0.0);
      const double total_value = total->value[0];
      if (!std::isfinite(total_value))
        throw NumericError(
            "non-finite loss at epoch " + std::to_string(epoch) + ", update " +
            std::to_string(step_) + " (steps " + std::to_string(t0) + "..+" +
            std::to_string(cfg_.tbptt_len) + "): L_pw=" + std::to_string(terms.l_pw) +
            ", L_msg=" + std::to_string(terms.l_msg));

      nn::backward(total);
      adam_.step();
      adam_.zero_grad();
      ++step_;
      ++report.updates;
      loss_sum += total_value;
      if (log)
        log(epoch, step_, terms.l_pw / static_cast<double>(members.size()),
            terms.l_msg / static_cast<double>(members.size()), total_value);

      for (Member& m : members) m.state = net_.detach(m.state);
    }
  }

  report.mean_loss = report.updates > 0 ? loss_sum / report.updates : 0.0;
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  return report;
}

double Trainer::evaluate_loss(const std::vector<SequenceData>& dataset, double alpha) const {
  const LossConfig loss_cfg;
  double total = 0.0;
  std::size_t steps = 0;
  for (const SequenceData& seq : dataset) {
    NetworkState state = net_.init_state(seq.camera.height, seq.camera.width);
    for (const SequenceRecord& rec : seq.records) {
      if (rec.lidar) {
        const SparseDepthImage sparse = project_lidar(*rec.lidar, seq.camera);
        state = net_.encode_lidar(normalize_depth(sparse.data, seq.camera.max_range), state);
      }
      const EventVolume vol =
          build_event_volume(rec.window, cfg_.bins, seq.camera.height, seq.camera.width);
      state = net_.encode_events(vol.data, state);
      const DepthPair pred = net_.decode(state);

      const Tensor gbn = normalize_depth(rec.gt_begin.data, seq.camera.max_range);
      const Tensor gen = normalize_depth(rec.gt_end.data, seq.camera.max_range);
      total += l1_loss(pred.d_bf, gbn, rec.gt_begin.valid) +
               alpha * multiscale_gradient_loss(pred.d_bf, gbn, rec.gt_begin.valid,
                                                loss_cfg.scales);
      total += l1_loss(pred.d_af, gen, rec.gt_end.valid) +
               alpha * multiscale_gradient_loss(pred.d_af, gen, rec.gt_end.valid,
                                                loss_cfg.scales);
      ++steps;
    }
  }
  return steps > 0 ? total / static_cast<double>(steps) : 0.0;
}

void Trainer::save(const std::filesystem::path& path, int epoch, int batch_in_epoch) const {
  Checkpoint ckpt = net_.to_checkpoint();
  ckpt.step = step_;
  ckpt.epoch = epoch;
  ckpt.batch_in_epoch = batch_in_epoch;
  adam_.export_state(ckpt);
  write_checkpoint(path, ckpt);
}

std::pair<Trainer, ResumePoint> Trainer::load(const std::filesystem::path& path,
                                              const TrainConfig& cfg) {
  const Checkpoint ckpt = read_checkpoint(path);
  if (!(ckpt.config == cfg.network()))
    throw DataError("checkpoint network configuration does not match the train config");
  Trainer trainer(AledNet::from_checkpoint(ckpt), cfg);
  if (ckpt.has_adam) trainer.adam_.import_state(ckpt);
  trainer.step_ = ckpt.step;
  return {std::move(trainer), ResumePoint{ckpt.epoch, ckpt.batch_in_epoch}};
}

}  // namespace aled
