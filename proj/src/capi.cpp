#include "aled.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "aled/dataset.hpp"
#include "aled/errors.hpp"
#include "aled/evaluation.hpp"
#include "aled/image_io.hpp"
#include "aled/network.hpp"
#include "aled/representations.hpp"
#include "aled/synthetic.hpp"
#include "aled/trainer.hpp"
#include "io_bytes.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

template <typename Fn>
aled_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return ALED_OK;
  } catch (const aled::UsageError& e) {
    set_error(e.what());
    return ALED_ERR_USAGE;
  } catch (const aled::DataError& e) {
    set_error(e.what());
    return ALED_ERR_DATA;
  } catch (const aled::NumericError& e) {
    set_error(e.what());
    return ALED_ERR_NUMERIC;
  } catch (const std::exception& e) {
    set_error(e.what());
    return ALED_ERR_USAGE;
  }
}

aled::NetworkConfig parse_model_config(const char* config_kv) {
  aled::NetworkConfig cfg;
  if (!config_kv) return cfg;
  for (const auto& [key, val] : aled::parse_kv_text(config_kv)) {
    if (key == "base_channels")
      cfg.base_channels = std::stoi(val);
    else if (key == "bins")
      cfg.bins = std::stoi(val);
    else
      throw aled::UsageError("unknown model config key: " + key);
  }
  cfg.validate();
  return cfg;
}

std::vector<aled::SequenceData> load_dataset(const char* data_dir) {
  if (!data_dir) throw aled::UsageError("data directory is required");
  std::vector<aled::SequenceData> seqs;
  for (const fs::path& dir : aled::find_sequences(data_dir)) {
    aled::SequenceData seq = aled::read_sequence(dir);
    const auto report = aled::validate_sequence(seq.records, seq.camera);
    if (!report.empty())
      throw aled::DataError("sequence " + dir.string() + " is inconsistent (" +
                            std::to_string(report.size()) + " violations; first: record " +
                            std::to_string(report.front().record) + ", " + report.front().what +
                            ")");
    seqs.push_back(std::move(seq));
  }
  return seqs;
}

void write_f32_file(const fs::path& path, const aled::Tensor& t) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(t.size() * 4);
  for (std::size_t i = 0; i < t.size(); ++i)
    aled::detail::put_f32(bytes, static_cast<float>(t[i]));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw aled::DataError("cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw aled::DataError("write failed: " + path.string());
}

aled::Tensor read_f32_file(const fs::path& path, int h, int w) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw aled::DataError("cannot open: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() != static_cast<std::size_t>(h) * w * 4)
    throw aled::DataError("unexpected size of " + path.string());
  aled::Tensor t({h, w});
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<double>(aled::detail::get_f32(bytes.data() + 4 * i));
  return t;
}

struct InferOptions {
  double tau = 1.0;
  double range_lo = 0.0;
  double range_hi = -1.0;  // < 0: use max_range
};

InferOptions parse_infer_options(const char* options_kv) {
  InferOptions opt;
  if (!options_kv) return opt;
  for (const auto& [key, val] : aled::parse_kv_text(options_kv)) {
    if (key == "tau") {
      opt.tau = std::stod(val);
    } else if (key == "range") {
      const auto colon = val.find(':');
      if (colon == std::string::npos)
        throw aled::UsageError("range must look like lo:hi (meters)");
      opt.range_lo = std::stod(val.substr(0, colon));
      opt.range_hi = std::stod(val.substr(colon + 1));
      if (!(opt.range_hi > opt.range_lo)) throw aled::UsageError("range: hi must exceed lo");
    } else {
      throw aled::UsageError("unknown option key: " + key);
    }
  }
  return opt;
}

std::string step_name(std::size_t k, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "step_%04zu_%s", k, suffix);
  return buf;
}

}  // namespace

struct aled_model {
  aled::AledNet net;
};

struct aled_state {
  aled::NetworkState state;
  double max_range = 0.0;
};

extern "C" {

const char* aled_version(void) { return "0.1.0"; }

const char* aled_last_error(void) { return g_last_error.c_str(); }

void aled_set_num_threads(int n) {
  if (n < 1) n = 1;
  const std::string value = std::to_string(n);
  ::setenv("OPENBLAS_NUM_THREADS", value.c_str(), 1);
  ::setenv("OMP_NUM_THREADS", value.c_str(), 1);
}

void aled_string_free(char* s) { std::free(s); }

aled_status aled_model_create(const char* config_kv, uint64_t seed, aled_model** out) {
  return guarded([&] {
    if (!out) throw aled::UsageError("output handle is null");
    const aled::NetworkConfig cfg = parse_model_config(config_kv);
    *out = new aled_model{aled::AledNet(cfg, seed)};
  });
}

aled_status aled_model_load(const char* checkpoint_path, aled_model** out) {
  return guarded([&] {
    if (!out || !checkpoint_path) throw aled::UsageError("null argument");
    const aled::Checkpoint ckpt = aled::read_checkpoint(checkpoint_path);
    *out = new aled_model{aled::AledNet::from_checkpoint(ckpt)};
  });
}

aled_status aled_model_save(const aled_model* model, const char* path) {
  return guarded([&] {
    if (!model || !path) throw aled::UsageError("null argument");
    aled::write_checkpoint(path, model->net.to_checkpoint());
  });
}

int64_t aled_model_param_count(const aled_model* model) {
  return model ? model->net.param_count() : 0;
}

void aled_model_free(aled_model* model) { delete model; }

aled_status aled_state_create(const aled_model* model, int width, int height, double max_range,
                              aled_state** out) {
  return guarded([&] {
    if (!model || !out) throw aled::UsageError("null argument");
    if (!(max_range > 0.0)) throw aled::UsageError("max_range must be positive");
    *out = new aled_state{model->net.init_state(height, width), max_range};
  });
}

void aled_state_free(aled_state* state) { delete state; }

aled_status aled_step(const aled_model* model, aled_state* state, const float* lidar_depth,
                      const aled_event* events, size_t event_count, int64_t window_t0_us,
                      int64_t window_t1_us, float* out_depth_bf, float* out_depth_af) {
  return guarded([&] {
    if (!model || !state || !out_depth_bf || !out_depth_af)
      throw aled::UsageError("null argument");
    if (event_count > 0 && !events) throw aled::UsageError("null event array");
    const int h = state->state.s1.h(), w = state->state.s1.w();

    const aled::Tensor* lidar_ptr = nullptr;
    aled::Tensor lidar_norm;
    if (lidar_depth) {
      aled::Tensor meters({h, w});
      for (std::size_t i = 0; i < meters.size(); ++i)
        meters[i] = static_cast<double>(lidar_depth[i]);
      lidar_norm = aled::normalize_depth(meters, state->max_range);
      lidar_ptr = &lidar_norm;
    }

    aled::EventWindow window;
    window.t_start = window_t0_us;
    window.t_end = window_t1_us;
    window.events.reserve(event_count);
    for (std::size_t i = 0; i < event_count; ++i) {
      aled::Event e;
      e.x = events[i].x;
      e.y = events[i].y;
      e.t = events[i].t_us;
      e.p = events[i].polarity < 0 ? -1 : 1;
      window.events.push_back(e);
    }
    const aled::EventVolume vol =
        aled::build_event_volume(window, model->net.config().bins, h, w);

    auto [pred, next] = model->net.forward_step(lidar_ptr, vol.data, state->state);
    state->state = std::move(next);
    const aled::Tensor bf = aled::denormalize_depth(pred.d_bf, state->max_range);
    const aled::Tensor af = aled::denormalize_depth(pred.d_af, state->max_range);
    for (std::size_t i = 0; i < bf.size(); ++i) {
      out_depth_bf[i] = static_cast<float>(bf[i]);
      out_depth_af[i] = static_cast<float>(af[i]);
    }
  });
}

aled_status aled_generate_dataset(const char* scene, const char* out_dir, int64_t seed_override,
                                  aled_gen_stats* stats) {
  return guarded([&] {
    if (!scene || !out_dir) throw aled::UsageError("null argument");
    aled::synth::SceneSpec spec;
    if (std::strcmp(scene, "default") == 0) {
      spec = aled::synth::default_scene();
    } else {
      std::ifstream f(scene);
      if (!f) throw aled::DataError(std::string("cannot open scene file: ") + scene);
      std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
      spec = aled::synth::scene_from_json(text);
    }
    if (seed_override >= 0) spec.seed = static_cast<std::uint64_t>(seed_override);
    const aled::synth::GenStats s = aled::synth::generate_dataset(spec, out_dir);
    if (stats) *stats = {s.records, s.events, s.scans};
  });
}

aled_status aled_train(const char* data_dir, const char* out_dir, const char* config_kv,
                       const char* resume_checkpoint, aled_train_log_fn log_fn, void* user) {
  return guarded([&] {
    if (!out_dir) throw aled::UsageError("output directory is required");
    const std::vector<aled::SequenceData> seqs = load_dataset(data_dir);

    aled::TrainConfig cfg;
    if (config_kv) cfg = aled::parse_train_config(config_kv);
    cfg.validate();

    const fs::path out(out_dir);
    if (!out.parent_path().empty() && !fs::exists(out.parent_path()))
      throw aled::DataError("parent directory does not exist: " + out.parent_path().string());
    fs::create_directory(out);

    aled::ResumePoint rp;
    std::unique_ptr<aled::Trainer> trainer;
    if (resume_checkpoint) {
      auto [loaded, point] = aled::Trainer::load(resume_checkpoint, cfg);
      trainer = std::make_unique<aled::Trainer>(std::move(loaded));
      rp = point;
    } else {
      trainer = std::make_unique<aled::Trainer>(
          aled::AledNet(cfg.network(), cfg.seed), cfg);
    }

    {
      std::ofstream f(out / "config_used.kv", std::ios::binary | std::ios::trunc);
      if (!f) throw aled::DataError("cannot write config_used.kv");
      f << aled::train_config_to_kv(cfg);
    }

    std::ofstream log(out / "train_log.tsv",
                      std::ios::binary | (resume_checkpoint ? std::ios::app : std::ios::trunc));
    if (!log) throw aled::DataError("cannot open train_log.tsv");

    const aled::TrainLogFn log_line = [&](int epoch, std::int64_t step, double l_pw,
                                          double l_msg, double total) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%d\t%lld\t%.9e\t%.9e\t%.9e\n", epoch,
                    static_cast<long long>(step), l_pw, l_msg, total);
      log << buf;
      log.flush();
      if (log_fn) log_fn(epoch, step, l_pw, l_msg, total, user);
    };

    for (int epoch = rp.epoch; epoch <= cfg.epochs; ++epoch) {
      const int start_batch = epoch == rp.epoch ? rp.batch_in_epoch : 0;
      trainer->train_epoch(seqs, epoch, log_line, start_batch);
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_epoch_%03d.ckpt", epoch);
      trainer->save(out / name, epoch + 1, 0);
    }
  });
}

aled_status aled_evaluate(const char* checkpoint_path, const char* data_dir,
                          const char* options_kv, char** out_report) {
  return guarded([&] {
    if (!out_report) throw aled::UsageError("null output argument");
    aled::EvalOptions opt;
    if (options_kv) {
      for (const auto& [key, val] : aled::parse_kv_text(options_kv)) {
        if (key == "cutoffs") {
          opt.cutoffs.clear();
          std::string rest = val;
          while (!rest.empty()) {
            const auto comma = rest.find(',');
            opt.cutoffs.push_back(std::stod(rest.substr(0, comma)));
            if (comma == std::string::npos) break;
            rest = rest.substr(comma + 1);
          }
        } else if (key == "tau") {
          opt.tau = std::stod(val);
        } else if (key == "nn_only") {
          opt.nn_only = val != "0";
        } else if (key == "oracle") {
          opt.oracle = val != "0";
        } else if (key == "fast_nn") {
          opt.fast_nn = val != "0";
        } else {
          throw aled::UsageError("unknown option key: " + key);
        }
      }
    }
    if (!checkpoint_path && !opt.nn_only && !opt.oracle)
      throw aled::UsageError("a checkpoint is required unless nn_only or oracle is set");

    const std::vector<aled::SequenceData> seqs = load_dataset(data_dir);
    std::unique_ptr<aled::AledNet> net;
    if (checkpoint_path && !opt.nn_only && !opt.oracle)
      net = std::make_unique<aled::AledNet>(
          aled::AledNet::from_checkpoint(aled::read_checkpoint(checkpoint_path)));

    const std::string report = aled::evaluate_dataset(net.get(), seqs, opt);
    char* buf = static_cast<char*>(std::malloc(report.size() + 1));
    if (!buf) throw std::bad_alloc();
    std::memcpy(buf, report.c_str(), report.size() + 1);
    *out_report = buf;
  });
}

aled_status aled_infer(const char* checkpoint_path, const char* sequence_dir, const char* out_dir,
                       const char* options_kv) {
  return guarded([&] {
    if (!checkpoint_path || !sequence_dir || !out_dir) throw aled::UsageError("null argument");
    const InferOptions opt = parse_infer_options(options_kv);

    const aled::AledNet net =
        aled::AledNet::from_checkpoint(aled::read_checkpoint(checkpoint_path));
    const aled::SequenceData seq = aled::read_sequence(sequence_dir);
    if (seq.volume_bins != net.config().bins)
      throw aled::DataError("sequence bin count does not match the checkpoint");

    const fs::path out(out_dir);
    if (!out.parent_path().empty() && !fs::exists(out.parent_path()))
      throw aled::DataError("parent directory does not exist: " + out.parent_path().string());
    fs::create_directory(out);

    const double range_lo = opt.range_lo;
    const double range_hi = opt.range_hi > 0.0 ? opt.range_hi : seq.camera.max_range;

    aled::NetworkState state = net.init_state(seq.camera.height, seq.camera.width);
    for (std::size_t k = 0; k < seq.records.size(); ++k) {
      const aled::SequenceRecord& rec = seq.records[k];
      const aled::Tensor* lidar_ptr = nullptr;
      aled::Tensor lidar_norm;
      aled::SparseDepthImage sparse;
      if (rec.lidar) {
        sparse = aled::project_lidar(*rec.lidar, seq.camera);
        lidar_norm = aled::normalize_depth(sparse.data, seq.camera.max_range);
        lidar_ptr = &lidar_norm;
      }
      const aled::EventVolume vol = aled::build_event_volume(
          rec.window, net.config().bins, seq.camera.height, seq.camera.width);
      auto [pred_norm, next] = net.forward_step(lidar_ptr, vol.data, state);
      state = std::move(next);

      aled::DepthPair pred;
      pred.d_bf = aled::denormalize_depth(pred_norm.d_bf, seq.camera.max_range);
      pred.d_af = aled::denormalize_depth(pred_norm.d_af, seq.camera.max_range);

      write_f32_file(out / (step_name(k, "bf") + ".bin"), pred.d_bf);
      write_f32_file(out / (step_name(k, "af") + ".bin"), pred.d_af);

      aled::write_png(out / (step_name(k, "events") + ".png"),
                      aled::draw_events(rec.window, seq.camera.height, seq.camera.width));
      if (rec.lidar)
        aled::write_png(out / (step_name(k, "lidar") + ".png"),
                        aled::draw_sparse_depth(sparse, range_lo, range_hi));
      aled::write_png(out / (step_name(k, "pred_bf") + ".png"),
                      aled::colormap_depth(pred.d_bf, range_lo, range_hi));
      aled::write_png(out / (step_name(k, "pred_af") + ".png"),
                      aled::colormap_depth(pred.d_af, range_lo, range_hi));
      aled::write_png(out / (step_name(k, "gt_bf") + ".png"),
                      aled::colormap_depth(rec.gt_begin.data, range_lo, range_hi));
      aled::write_png(out / (step_name(k, "gt_af") + ".png"),
                      aled::colormap_depth(rec.gt_end.data, range_lo, range_hi));
      aled::write_png(out / (step_name(k, "change") + ".png"),
                      aled::draw_change_overlay(pred, rec.window, opt.tau));
    }

    json manifest;
    manifest["sequence_dir"] = fs::absolute(sequence_dir).string();
    manifest["steps"] = seq.records.size();
    manifest["width"] = seq.camera.width;
    manifest["height"] = seq.camera.height;
    manifest["max_range"] = seq.camera.max_range;
    manifest["tau"] = opt.tau;
    manifest["range_lo"] = range_lo;
    manifest["range_hi"] = range_hi;
    std::ofstream f(out / "infer.json", std::ios::binary | std::ios::trunc);
    if (!f) throw aled::DataError("cannot write infer.json");
    f << manifest.dump(2) << "\n";
  });
}

aled_status aled_render_figures(const char* infer_dir, const char* options_kv) {
  return guarded([&] {
    if (!infer_dir) throw aled::UsageError("null argument");
    const fs::path dir(infer_dir);
    std::ifstream mf(dir / "infer.json");
    if (!mf) throw aled::DataError("no infer.json under " + dir.string());
    json manifest;
    try {
      mf >> manifest;
    } catch (const json::exception& e) {
      throw aled::DataError(std::string("invalid infer.json: ") + e.what());
    }

    InferOptions opt = parse_infer_options(options_kv);
    const std::size_t steps = manifest.at("steps").get<std::size_t>();
    const int w = manifest.at("width").get<int>();
    const int h = manifest.at("height").get<int>();
    double range_lo = manifest.value("range_lo", 0.0);
    double range_hi = manifest.value("range_hi", manifest.at("max_range").get<double>());
    if (opt.range_hi > 0.0) {
      range_lo = opt.range_lo;
      range_hi = opt.range_hi;
    }
    const double tau = options_kv ? opt.tau : manifest.value("tau", 1.0);

    const aled::SequenceData seq =
        aled::read_sequence(manifest.at("sequence_dir").get<std::string>());
    if (seq.records.size() < steps) throw aled::DataError("sequence shorter than infer output");

    aled::SparseDepthImage latest;
    bool have_scan = false;
    for (std::size_t k = 0; k < steps; ++k) {
      const aled::SequenceRecord& rec = seq.records[k];
      aled::DepthPair pred;
      pred.d_bf = read_f32_file(dir / (step_name(k, "bf") + ".bin"), h, w);
      pred.d_af = read_f32_file(dir / (step_name(k, "af") + ".bin"), h, w);
      if (rec.lidar) {
        latest = aled::project_lidar(*rec.lidar, seq.camera);
        have_scan = true;
      }
      std::vector<aled::ImageRGB> panels;
      panels.push_back(aled::draw_events(rec.window, h, w));
      panels.push_back(have_scan ? aled::draw_sparse_depth(latest, range_lo, range_hi)
                                 : aled::ImageRGB(w, h, 0, 0, 0));
      panels.push_back(aled::colormap_depth(pred.d_bf, range_lo, range_hi));
      panels.push_back(aled::colormap_depth(pred.d_af, range_lo, range_hi));
      panels.push_back(aled::colormap_depth(rec.gt_end.data, range_lo, range_hi));
      panels.push_back(aled::draw_change_overlay(pred, rec.window, tau));
      aled::write_png(dir / (step_name(k, "panel") + ".png"), aled::vstack(panels));
    }
  });
}

}  // extern "C"
