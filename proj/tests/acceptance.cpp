// Acceptance suite: every criterion prints one PASS/FAIL line; the binary
// exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "aled/errors.hpp"
#include "aled/evaluation.hpp"
#include "aled/losses.hpp"
#include "aled/network.hpp"
#include "aled/representations.hpp"
#include "aled/rng.hpp"
#include "aled/synthetic.hpp"
#include "aled/trainer.hpp"

using namespace aled;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) return "<missing:" + p.string() + ">";
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

bool dirs_equal(const fs::path& a, const fs::path& b, std::string& detail) {
  std::vector<fs::path> rel;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) rel.push_back(fs::relative(e.path(), a));
  if (rel.empty()) {
    detail = "no files under " + a.string();
    return false;
  }
  for (const fs::path& r : rel) {
    if (file_bytes(a / r) != file_bytes(b / r)) {
      detail = "mismatch at " + r.string();
      return false;
    }
  }
  detail = std::to_string(rel.size()) + " files identical";
  return true;
}

// ---------- criterion 1 ----------

Tensor brute_force_volume(const EventWindow& w, int bins, int h, int width) {
  Tensor vol({2 * bins, h, width});
  const double span = static_cast<double>(w.t_end - w.t_start);
  const double scale = static_cast<double>(bins - 1);
  for (const Event& e : w.events) {
    const int base = e.p < 0 ? 0 : bins;
    for (int b = 0; b < bins; ++b) {
      double weight;
      if (span > 0.0) {
        const double num = std::abs(static_cast<double>(b) * span -
                                    scale * static_cast<double>(e.t - w.t_start));
        weight = std::max(0.0, 1.0 - num / span);
      } else {
        weight = b == 0 ? 1.0 : 0.0;
      }
      vol.at(base + b, e.y, e.x) += weight;
    }
  }
  return vol;
}

bool criterion_event_volume(std::string& detail) {
  const auto t0 = Clock::now();
  Rng rng(1001);
  const int h = 16, w = 16, bins = 5;
  for (int trial = 0; trial < 1000; ++trial) {
    EventWindow win;
    win.t_start = rng.uniform_int(5000);
    win.t_end = win.t_start + rng.uniform_int(30000);
    const int n = rng.uniform_int(65);
    std::int64_t t = win.t_start;
    for (int i = 0; i < n; ++i) {
      const std::int64_t room = win.t_end - t;
      t += room > 0 ? rng.uniform_int(static_cast<int>(std::min<std::int64_t>(room, 2048)) + 1) : 0;
      win.events.push_back({rng.uniform_int(w), rng.uniform_int(h), t,
                            static_cast<std::int8_t>(rng.bernoulli(0.5) ? 1 : -1)});
    }

    const EventVolume vol = build_event_volume(win, bins, h, w);
    const Tensor ref = brute_force_volume(win, bins, h, w);
    for (std::size_t i = 0; i < ref.size(); ++i)
      if (vol.data[i] != ref[i]) {
        detail = "value mismatch vs brute force at trial " + std::to_string(trial);
        return false;
      }

    long pos = 0, neg = 0;
    for (const Event& e : win.events) (e.p > 0 ? pos : neg)++;
    double pos_mass = 0.0, neg_mass = 0.0;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int b = 0; b < bins; ++b)
      for (std::size_t i = 0; i < plane; ++i) {
        neg_mass += vol.data[static_cast<std::size_t>(b) * plane + i];
        pos_mass += vol.data[static_cast<std::size_t>(bins + b) * plane + i];
      }
    if (std::abs(pos_mass - pos) >= 1e-9 || std::abs(neg_mass - neg) >= 1e-9) {
      detail = "mass conservation off at trial " + std::to_string(trial);
      return false;
    }
  }
  const double secs = seconds_since(t0);
  detail = "1000 windows exact, runtime " + std::to_string(secs) + " s";
  return secs < 10.0;
}

// ---------- criterion 2 ----------

bool criterion_projection(std::string& detail) {
  Rng rng(1002);
  for (int trial = 0; trial < 100; ++trial) {
    CameraModel cam;
    cam.fx = rng.uniform(20.0, 90.0);
    cam.fy = rng.uniform(20.0, 90.0);
    cam.width = 40;
    cam.height = 30;
    cam.cx = rng.uniform(12.0, 28.0);
    cam.cy = rng.uniform(8.0, 22.0);
    cam.max_range = rng.uniform(5.0, 60.0);
    cam.T_cam_lidar.R =
        rotation_rpy(rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2));
    cam.T_cam_lidar.t = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};

    PointCloud cloud;
    const int n = rng.uniform_int(300);
    for (int i = 0; i < n; ++i)
      cloud.points.push_back(
          {rng.uniform(-25.0, 25.0), rng.uniform(-25.0, 25.0), rng.uniform(-25.0, 25.0)});
    // force pixel conflicts: duplicate some points at scaled depths
    for (int i = 0; i < n / 4; ++i) {
      const Vec3& p = cloud.points[static_cast<std::size_t>(rng.uniform_int(n))];
      cloud.points.push_back(p * rng.uniform(0.5, 2.0));
    }

    const SparseDepthImage got = project_lidar(cloud, cam);

    Tensor expect({cam.height, cam.width});
    for (const Vec3& p : cloud.points) {
      const Vec3 pc = cam.T_cam_lidar.R * p + cam.T_cam_lidar.t;
      if (pc.z <= 0.0 || pc.z > cam.max_range) continue;
      const long xi = std::lround(cam.fx * pc.x / pc.z + cam.cx);
      const long yi = std::lround(cam.fy * pc.y / pc.z + cam.cy);
      if (xi < 0 || xi >= cam.width || yi < 0 || yi >= cam.height) continue;
      double& cell = expect.at(static_cast<int>(yi), static_cast<int>(xi));
      if (cell == 0.0 || pc.z < cell) cell = pc.z;
    }
    for (std::size_t i = 0; i < expect.size(); ++i)
      if (got.data[i] != expect[i]) {
        detail = "projection mismatch at trial " + std::to_string(trial);
        return false;
      }
  }
  detail = "100 random clouds/calibrations exact";
  return true;
}

// ---------- criterion 3 ----------

bool criterion_loss_gradients(std::string& detail) {
  Rng rng(1003);
  const double alpha = 1.0;
  for (int trial = 0; trial < 3; ++trial) {
    Tensor gt({8, 8}), pred({8, 8});
    for (std::size_t i = 0; i < gt.size(); ++i) {
      gt[i] = rng.uniform(0.0, 1.0);
      pred[i] = rng.uniform(0.0, 1.0);
      if (std::abs(pred[i] - gt[i]) < 1e-3) pred[i] += 2e-3;  // keep off the l1 kink
    }
    Mask m(64, 1);

    auto node = nn::parameter(pred);
    auto loss =
        nn::add(l1_loss_node(node, gt, m), nn::affine(msg_loss_node(node, gt, m), alpha, 0.0));
    nn::backward(loss);

    const double eps = 1e-6;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      Tensor up = pred, dn = pred;
      up[i] += eps;
      dn[i] -= eps;
      const double fu = l1_loss(up, gt, m) + alpha * multiscale_gradient_loss(up, gt, m);
      const double fd = l1_loss(dn, gt, m) + alpha * multiscale_gradient_loss(dn, gt, m);
      const double numeric = (fu - fd) / (2.0 * eps);
      const double denom = std::max({std::abs(numeric), std::abs(node->grad[i]), 1e-6});
      if (std::abs(numeric - node->grad[i]) / denom >= 1e-4) {
        detail = "gradient mismatch at pixel " + std::to_string(i);
        return false;
      }
    }
  }

  // constant offsets must zero the gradient loss exactly; dyadic-grid values
  // keep the offset additions free of rounding
  Tensor gt({8, 8});
  for (std::size_t i = 0; i < gt.size(); ++i) gt[i] = rng.uniform_int(1024) / 1024.0;
  Tensor shifted = gt;
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 0.3125;
  if (multiscale_gradient_loss(shifted, gt, Mask(64, 1)) != 0.0) {
    detail = "constant offset did not cancel the gradient loss";
    return false;
  }
  detail = "rel err < 1e-4 on 8x8 maps; offset cancels exactly";
  return true;
}

// ---------- criterion 4 ----------

bool criterion_architecture(std::string& detail) {
  const NetworkConfig cfg{32, 5};
  const AledNet net(cfg, 77);

  const double count = static_cast<double>(net.param_count());
  if (count < 26e6 * 0.85 || count > 26e6 * 1.15) {
    detail = "parameter count " + std::to_string(net.param_count()) + " outside 26M +- 15%";
    return false;
  }

  const int h = 64, w = 64;
  Rng rng(1004);
  Tensor lidar({1, h, w}), events({10, h, w});
  for (std::size_t i = 0; i < lidar.size(); ++i) lidar[i] = rng.uniform(0.0, 1.0);
  for (std::size_t i = 0; i < events.size(); ++i) events[i] = rng.uniform(0.0, 2.0);
  auto [pred, state] = net.forward_step(&lidar, events, net.init_state(h, w));
  if (pred.d_bf.shape() != std::vector<int>{h, w} || pred.d_af.shape() != std::vector<int>{h, w}) {
    detail = "decode did not produce a (2, H, W) pair";
    return false;
  }

  // softmax masks are convex weights
  Tensor raw({36, 6, 7});
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = rng.uniform(-3.0, 3.0);
  const Tensor soft = nn::mask_softmax_forward(raw, 9, 4);
  for (int g = 0; g < 4; ++g)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 7; ++x) {
        double sum = 0.0;
        for (int k = 0; k < 9; ++k) sum += soft.at(k * 4 + g, y, x);
        if (std::abs(sum - 1.0) >= 1e-6) {
          detail = "mask weights do not sum to 1";
          return false;
        }
      }

  // one-hot center masks equal nearest-neighbor upsampling
  Tensor f({3, 5, 6});
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = rng.uniform(-2.0, 2.0);
  Tensor onehot({36, 5, 6});
  for (int s = 0; s < 4; ++s)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 6; ++x) onehot.at(4 * 4 + s, y, x) = 1.0;
  const Tensor up = nn::convex_combine_forward(f, onehot);
  const Tensor ref = nn::nearest_upsample2x(f);
  for (std::size_t i = 0; i < up.size(); ++i)
    if (up[i] != ref[i]) {
      detail = "one-hot center mask is not nearest-neighbor upsampling";
      return false;
    }

  detail = "shape (2,64,64); params " + std::to_string(net.param_count()) +
           "; masks convex; one-hot = NN";
  return true;
}

// ---------- criterion 5 ----------

bool criterion_recurrence(std::string& detail) {
  Rng rng(1005);
  const AledNet net(NetworkConfig{8, 5}, 99);
  NetworkState s = net.init_state(32, 32);
  const auto rand_map = [&](std::vector<int> shape, double hi) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(0.0, hi);
    return t;
  };
  for (int step = 0; step < 100; ++step) {
    if (step % 2 == 0) s = net.encode_lidar(rand_map({1, 32, 32}, 1.0), s);
    s = net.encode_events(rand_map({10, 32, 32}, 4.0), s);
    for (const Tensor* t : {&s.s1, &s.s2, &s.s3, &s.s4})
      for (std::size_t i = 0; i < t->size(); ++i)
        if (!((*t)[i] > -1.0 && (*t)[i] < 1.0)) {
          detail = "state left (-1, 1) at step " + std::to_string(step);
          return false;
        }
  }

  const NetworkState s0 = net.init_state(32, 32);
  const Tensor lidar = rand_map({1, 32, 32}, 1.0);
  const Tensor events = rand_map({10, 32, 32}, 2.0);
  const NetworkState le = net.encode_events(events, net.encode_lidar(lidar, s0));
  const NetworkState el = net.encode_lidar(lidar, net.encode_events(events, s0));
  double diff = 0.0;
  for (std::size_t i = 0; i < le.s1.size(); ++i) diff = std::max(diff, std::abs(le.s1[i] - el.s1[i]));
  if (diff <= 1e-12) {
    detail = "update order had no observable effect";
    return false;
  }
  detail = "bounded over 100 updates; order sensitivity " + std::to_string(diff);
  return true;
}

// ---------- criterion 6 ----------

bool criterion_nn_baseline(std::string& detail) {
  Rng rng(1006);
  for (int trial = 0; trial < 1000; ++trial) {
    const int h = 8 + rng.uniform_int(57), w = 8 + rng.uniform_int(57);
    SparseDepthImage sparse;
    sparse.data = Tensor({h, w});
    const int npts = 1 + rng.uniform_int(50);
    for (int i = 0; i < npts; ++i)
      sparse.data.at(rng.uniform_int(h), rng.uniform_int(w)) = rng.uniform(0.5, 40.0);

    EventWindow window;
    window.t_start = 0;
    window.t_end = 10;
    const int nev = 1 + rng.uniform_int(40);
    for (int i = 0; i < nev; ++i)
      window.events.push_back({rng.uniform_int(w), rng.uniform_int(h), 5, 1});
    // one crafted equidistant case per trial
    window.events.push_back({w / 2, h / 2, 6, 1});

    const auto brute = nn_associate(window, sparse);
    const auto grid = nn_associate_grid(window, sparse);
    for (std::size_t i = 0; i < brute.size(); ++i)
      if (brute[i] != grid[i]) {
        detail = "grid/brute-force mismatch at trial " + std::to_string(trial);
        return false;
      }
  }
  detail = "1000 random cases exact, ties included";
  return true;
}

// ---------- criterion 7 ----------

bool criterion_metric_oracles(std::string& detail) {
  synth::SceneSpec spec = synth::default_scene();
  spec.duration_s = 0.5;
  std::vector<SequenceData> seqs{synth::generate_sequence(spec)};
  seqs[0].name = "oracle";

  EvalOptions opt;
  opt.cutoffs = {10.0, 20.0};
  opt.oracle = true;
  const std::string report = evaluate_dataset(nullptr, seqs, opt);

  std::istringstream in(report);
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("cutoff_m", 0) == 0) continue;
    ++rows;
    std::istringstream cells(line);
    std::string cell;
    std::vector<std::string> row;
    while (std::getline(cells, cell, '\t')) row.push_back(cell);
    if (row.size() != 11) {
      detail = "malformed report row";
      return false;
    }
    for (const std::size_t idx : {1u, 2u, 3u, 4u, 6u, 8u, 9u}) {
      if (row[idx] != "-" && std::stod(row[idx]) != 0.0) {
        detail = "oracle error column " + std::to_string(idx) + " nonzero: " + row[idx];
        return false;
      }
    }
    if (row[10] != "-" && std::stod(row[10]) != 100.0) {
      detail = "oracle accuracy below 100%: " + row[10];
      return false;
    }
  }
  if (rows == 0) {
    detail = "no data rows in the report";
    return false;
  }

  // +-1 m boundary classifies on the closed interval
  if (classify_depth_change(1.0, 1.0) != DepthChangeClass::Same ||
      classify_depth_change(-1.0, 1.0) != DepthChangeClass::Same ||
      classify_depth_change(1.0 + 1e-9, 1.0) != DepthChangeClass::Farther ||
      classify_depth_change(-1.0 - 1e-9, 1.0) != DepthChangeClass::Closer) {
    detail = "boundary classification violates the closed-interval rule";
    return false;
  }
  detail = "oracle errors zero, accuracy 100%, boundaries closed";
  return true;
}

// ---------- criterion 8 ----------

struct OverfitScore {
  double mae_bf = 0.0, mae_af = 0.0, accuracy = 0.0;
};

OverfitScore score_sequence(const AledNet& net, const SequenceData& seq, double tau) {
  OverfitScore score;
  NetworkState state = net.init_state(seq.camera.height, seq.camera.width);
  double sum_bf = 0.0, sum_af = 0.0;
  long n_bf = 0, n_af = 0;
  long change_n = 0;
  double change_correct = 0.0;
  for (const SequenceRecord& rec : seq.records) {
    const Tensor* lidar_ptr = nullptr;
    Tensor lidar_norm;
    if (rec.lidar) {
      const SparseDepthImage sparse = project_lidar(*rec.lidar, seq.camera);
      lidar_norm = normalize_depth(sparse.data, seq.camera.max_range);
      lidar_ptr = &lidar_norm;
    }
    const EventVolume vol =
        build_event_volume(rec.window, net.config().bins, seq.camera.height, seq.camera.width);
    auto [pred_norm, next] = net.forward_step(lidar_ptr, vol.data, state);
    state = std::move(next);
    DepthPair pred;
    pred.d_bf = denormalize_depth(pred_norm.d_bf, seq.camera.max_range);
    pred.d_af = denormalize_depth(pred_norm.d_af, seq.camera.max_range);

    for (std::size_t i = 0; i < pred.d_bf.size(); ++i) {
      if (rec.gt_begin.valid[i]) {
        sum_bf += std::abs(pred.d_bf[i] - rec.gt_begin.data[i]);
        ++n_bf;
      }
      if (rec.gt_end.valid[i]) {
        sum_af += std::abs(pred.d_af[i] - rec.gt_end.data[i]);
        ++n_af;
      }
    }
    if (!rec.window.events.empty()) {
      const ChangeMetrics cm = depth_change_metrics(pred, rec.gt_begin, rec.gt_end, rec.window, tau);
      change_n += cm.count;
      change_correct += cm.accuracy * cm.count;
    }
  }
  score.mae_bf = n_bf > 0 ? sum_bf / n_bf : 1e300;
  score.mae_af = n_af > 0 ? sum_af / n_af : 1e300;
  score.accuracy = change_n > 0 ? change_correct / change_n : 0.0;
  return score;
}

bool criterion_overfit(std::string& detail) {
  const auto t0 = Clock::now();
  const double budget_s = 25.0 * 60.0;

  const synth::SceneSpec spec = synth::default_scene();  // 128x96, 20 records
  std::vector<SequenceData> data{synth::generate_sequence(spec)};
  data[0].name = "overfit";
  const double max_range = spec.camera.max_range;
  const double mae_bar = 0.05 * max_range;

  TrainConfig cfg;
  cfg.base_channels = 8;
  cfg.bins = 5;
  cfg.batch_size = 1;
  cfg.epochs = 1000;  // bounded by wall clock below
  cfg.crop = 0;
  cfg.hflip_prob = 0.0;
  cfg.tbptt_len = 8;
  cfg.learning_rate = 1e-3;
  cfg.seed = 2024;

  Trainer trainer(AledNet(cfg.network(), cfg.seed), cfg);
  OverfitScore best;
  best.mae_bf = best.mae_af = 1e300;
  int epoch = 0;
  while (seconds_since(t0) < budget_s) {
    ++epoch;
    trainer.train_epoch(data, epoch);
    if (epoch % 3 != 0) continue;
    const OverfitScore s = score_sequence(trainer.model(), data[0], 1.0);
    best = s;
    std::printf("        overfit epoch %d: mae_bf %.3f m, mae_af %.3f m, acc %.1f%% (%.0f s)\n",
                epoch, s.mae_bf, s.mae_af, 100.0 * s.accuracy, seconds_since(t0));
    std::fflush(stdout);
    if (s.mae_bf < mae_bar && s.mae_af < mae_bar && s.accuracy > 0.75) break;
  }

  char buf[256];
  std::snprintf(buf, sizeof buf,
                "epoch %d: MAE_bf %.3f m, MAE_af %.3f m (bar %.2f m), accuracy %.1f%% "
                "(bar 75%%), %.0f s",
                epoch, best.mae_bf, best.mae_af, mae_bar, 100.0 * best.accuracy,
                seconds_since(t0));
  detail = buf;
  return best.mae_bf < mae_bar && best.mae_af < mae_bar && best.accuracy > 0.75;
}

// ---------- criterion 9 ----------

bool criterion_determinism(std::string& detail) {
  const char* cli = std::getenv("ALED_CLI");
  if (!cli) {
    detail = "ALED_CLI is not set";
    return false;
  }
  const fs::path root = fs::temp_directory_path() / "aled_acceptance_det";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string quiet = " > /dev/null 2>&1";

  const auto run = [&](const std::string& args) {
    const std::string cmd = std::string(cli) + " " + args + quiet;
    return std::system(cmd.c_str()) == 0;
  };

  for (const char* name : {"g1", "g2"})
    if (!run("gen default " + (root / name).string() + " --seed 7 --threads 1")) {
      detail = "gen run failed";
      return false;
    }
  std::string why;
  if (!dirs_equal(root / "g1", root / "g2", why)) {
    detail = "gen not reproducible: " + why;
    return false;
  }

  const std::string train_args =
      " " + (root / "g1").string() + " {OUT} --seed 5 --epochs 1 --base-channels 4 --tbptt 4 "
      "--batch-size 1 --threads 1";
  for (const char* name : {"r1", "r2"}) {
    std::string args = "train" + train_args;
    const std::string out = (root / name).string();
    args.replace(args.find("{OUT}"), 5, out);
    if (!run(args)) {
      detail = "train run failed";
      return false;
    }
  }
  if (file_bytes(root / "r1" / "train_log.tsv") != file_bytes(root / "r2" / "train_log.tsv")) {
    detail = "training logs differ";
    return false;
  }
  if (file_bytes(root / "r1" / "checkpoint_epoch_001.ckpt") !=
      file_bytes(root / "r2" / "checkpoint_epoch_001.ckpt")) {
    detail = "checkpoints differ";
    return false;
  }
  fs::remove_all(root);
  detail = "gen directories and one-epoch training runs byte-identical";
  return true;
}

struct Criterion {
  int id;
  const char* title;
  std::function<bool(std::string&)> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "event-volume oracle", criterion_event_volume},
      {2, "projection oracle", criterion_projection},
      {3, "loss gradient check", criterion_loss_gradients},
      {4, "architecture conformance", criterion_architecture},
      {5, "recurrence contract", criterion_recurrence},
      {6, "NN-baseline oracle", criterion_nn_baseline},
      {7, "metric oracles", criterion_metric_oracles},
      {8, "end-to-end overfit", criterion_overfit},
      {9, "determinism", criterion_determinism},
  };

  bool all = true;
  for (const Criterion& c : criteria) {
    std::string detail;
    bool ok = false;
    try {
      ok = c.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    std::printf("[%s] criterion %d: %s - %s\n", ok ? "PASS" : "FAIL", c.id, c.title,
                detail.c_str());
    std::fflush(stdout);
    all = all && ok;
  }
  return all ? 0 : 1;
}
