// Command-line front end for the ALED shared library. Only the C API from
// aled.h is used here.

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <string>

#include <CLI11.hpp>

#include "aled.h"

namespace {

int fail(aled_status status) {
  std::fprintf(stderr, "error: %s\n", aled_last_error());
  return static_cast<int>(status);
}

std::string resolve_data_dir(const std::string& arg) {
  if (!arg.empty()) return arg;
  if (const char* env = std::getenv("ALED_DATA_ROOT")) return env;
  return {};
}

struct KvBuilder {
  std::string text;
  void add(const std::string& key, const std::string& value) {
    text += key + " = " + value + "\n";
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ALED: dense depth pairs from asynchronous LiDAR and event data"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  int threads = 0;
  app.add_option("--threads", threads, "worker threads for the numeric backends (1 = reproducible)");

  // ---- gen ----
  auto* gen = app.add_subcommand("gen", "generate a synthetic sequence");
  std::string gen_scene, gen_out;
  long long gen_seed = -1;
  gen->add_option("scene", gen_scene, "scene JSON file, or 'default'")->required();
  gen->add_option("out_dir", gen_out, "output sequence directory")->required();
  gen->add_option("--seed", gen_seed, "override the scene seed");

  // ---- train ----
  auto* train = app.add_subcommand("train", "train a model on a dataset");
  std::string train_data, train_out, train_config, train_resume;
  std::string lr, epochs, batch_size, crop, tbptt, seed, base_channels, bins, hflip_prob;
  train->add_option("data_dir", train_data, "dataset root (defaults to $ALED_DATA_ROOT)");
  train->add_option("out_dir", train_out, "run directory for checkpoints and logs")->required();
  train->add_option("--config", train_config, "training config file (key = value lines)");
  train->add_option("--resume", train_resume, "checkpoint to resume from");
  train->add_option("--lr", lr, "learning rate override");
  train->add_option("--epochs", epochs, "epoch count override");
  train->add_option("--batch-size", batch_size, "batch size override");
  train->add_option("--crop", crop, "square crop size override (0 = full frame)");
  train->add_option("--tbptt", tbptt, "unroll length override");
  train->add_option("--seed", seed, "seed override");
  train->add_option("--base-channels", base_channels, "network width override");
  train->add_option("--bins", bins, "event volume bin count override");
  train->add_option("--hflip-prob", hflip_prob, "horizontal flip probability override");

  // ---- eval ----
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint and the NN baseline");
  std::string eval_data, eval_ckpt, eval_cutoffs, eval_out;
  double eval_tau = 1.0;
  bool nn_only = false, oracle = false;
  eval->add_option("data_dir", eval_data, "dataset root (defaults to $ALED_DATA_ROOT)");
  eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint");
  eval->add_option("--cutoffs", eval_cutoffs, "comma-separated cutoff distances (meters)");
  eval->add_option("--tau", eval_tau, "depth-change classification threshold (meters)");
  eval->add_flag("--nn-only", nn_only, "only run the nearest-neighbor baseline");
  eval->add_flag("--oracle", oracle, "use ground truth as the prediction");
  bool fast_nn = false;
  eval->add_flag("--fast-nn", fast_nn, "grid-indexed NN association (identical results)");
  eval->add_option("--out", eval_out, "write the report here instead of stdout");

  // ---- infer ----
  auto* infer = app.add_subcommand("infer", "run a checkpoint over a sequence");
  std::string infer_ckpt, infer_seq, infer_out, infer_range;
  double infer_tau = 1.0;
  infer->add_option("checkpoint", infer_ckpt, "trained checkpoint")->required();
  infer->add_option("sequence_dir", infer_seq, "sequence directory")->required();
  infer->add_option("out_dir", infer_out, "output directory")->required();
  infer->add_option("--range", infer_range, "color scale endpoints, lo:hi meters");
  infer->add_option("--tau", infer_tau, "depth-change threshold for the overlay");

  // ---- plot ----
  auto* plot = app.add_subcommand("plot", "compose panel figures for an inference run");
  std::string plot_dir, plot_range;
  plot->add_option("out_dir", plot_dir, "directory written by 'infer'")->required();
  plot->add_option("--range", plot_range, "color scale endpoints, lo:hi meters");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ALED_ERR_USAGE);
  }

  if (threads > 0) aled_set_num_threads(threads);

  if (gen->parsed()) {
    aled_gen_stats stats{};
    const aled_status st = aled_generate_dataset(gen_scene.c_str(), gen_out.c_str(),
                                                 gen_seed, &stats);
    if (st != ALED_OK) return fail(st);
    std::printf("wrote %" PRIu64 " records, %" PRIu64 " events, %" PRIu64 " scans to %s\n",
                stats.records, stats.events, stats.scans, gen_out.c_str());
    return 0;
  }

  if (train->parsed()) {
    const std::string data = resolve_data_dir(train_data);
    if (data.empty()) {
      std::fprintf(stderr, "error: no data_dir given and ALED_DATA_ROOT is unset\n");
      return static_cast<int>(ALED_ERR_USAGE);
    }
    KvBuilder kv;
    if (!train_config.empty()) {
      std::FILE* f = std::fopen(train_config.c_str(), "rb");
      if (!f) {
        std::fprintf(stderr, "error: cannot open config file %s\n", train_config.c_str());
        return static_cast<int>(ALED_ERR_DATA);
      }
      char buf[4096];
      std::size_t n;
      while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) kv.text.append(buf, n);
      std::fclose(f);
      if (!kv.text.empty() && kv.text.back() != '\n') kv.text += '\n';
    }
    // flags win over the config file
    if (!lr.empty()) kv.add("learning_rate", lr);
    if (!epochs.empty()) kv.add("epochs", epochs);
    if (!batch_size.empty()) kv.add("batch_size", batch_size);
    if (!crop.empty()) kv.add("crop", crop);
    if (!tbptt.empty()) kv.add("tbptt_len", tbptt);
    if (!seed.empty()) kv.add("seed", seed);
    if (!base_channels.empty()) kv.add("base_channels", base_channels);
    if (!bins.empty()) kv.add("bins", bins);
    if (!hflip_prob.empty()) kv.add("hflip_prob", hflip_prob);

    const auto log_fn = [](int epoch, int64_t step, double l_pw, double l_msg, double total,
                           void*) {
      std::printf("epoch %d step %" PRId64 "  L_pw %.6g  L_msg %.6g  total %.6g\n", epoch, step,
                  l_pw, l_msg, total);
    };
    const aled_status st =
        aled_train(data.c_str(), train_out.c_str(), kv.text.empty() ? nullptr : kv.text.c_str(),
                   train_resume.empty() ? nullptr : train_resume.c_str(), log_fn, nullptr);
    if (st != ALED_OK) return fail(st);
    return 0;
  }

  if (eval->parsed()) {
    const std::string data = resolve_data_dir(eval_data);
    if (data.empty()) {
      std::fprintf(stderr, "error: no data_dir given and ALED_DATA_ROOT is unset\n");
      return static_cast<int>(ALED_ERR_USAGE);
    }
    KvBuilder kv;
    if (!eval_cutoffs.empty()) kv.add("cutoffs", eval_cutoffs);
    kv.add("tau", std::to_string(eval_tau));
    if (nn_only) kv.add("nn_only", "1");
    if (oracle) kv.add("oracle", "1");
    if (fast_nn) kv.add("fast_nn", "1");
    char* report = nullptr;
    const aled_status st = aled_evaluate(eval_ckpt.empty() ? nullptr : eval_ckpt.c_str(),
                                         data.c_str(), kv.text.c_str(), &report);
    if (st != ALED_OK) return fail(st);
    if (eval_out.empty()) {
      std::fputs(report, stdout);
    } else {
      std::FILE* f = std::fopen(eval_out.c_str(), "wb");
      if (!f) {
        aled_string_free(report);
        std::fprintf(stderr, "error: cannot write %s\n", eval_out.c_str());
        return static_cast<int>(ALED_ERR_DATA);
      }
      std::fputs(report, f);
      std::fclose(f);
    }
    aled_string_free(report);
    return 0;
  }

  if (infer->parsed()) {
    KvBuilder kv;
    kv.add("tau", std::to_string(infer_tau));
    if (!infer_range.empty()) kv.add("range", infer_range);
    const aled_status st =
        aled_infer(infer_ckpt.c_str(), infer_seq.c_str(), infer_out.c_str(), kv.text.c_str());
    if (st != ALED_OK) return fail(st);
    return 0;
  }

  if (plot->parsed()) {
    KvBuilder kv;
    if (!plot_range.empty()) kv.add("range", plot_range);
    const aled_status st =
        aled_render_figures(plot_dir.c_str(), kv.text.empty() ? nullptr : kv.text.c_str());
    if (st != ALED_OK) return fail(st);
    return 0;
  }

  return static_cast<int>(ALED_ERR_USAGE);
}
