// Exercises the shared-library surface end to end: generation, direct model
// stepping, training, evaluation, inference, figure rendering, error codes.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "aled.h"

namespace fs = std::filesystem;

namespace {

struct TempTree {
  fs::path root;
  explicit TempTree(const char* tag) {
    root = fs::temp_directory_path() / (std::string("aled_capi_") + tag);
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~TempTree() { fs::remove_all(root); }
};

const char* kTinySceneJson = R"json({
  "seed": 5,
  "duration_s": 0.4,
  "gt_rate_hz": 10.0,
  "camera": {
    "fx": 30.0, "fy": 30.0, "cx": 15.5, "cy": 15.5,
    "width": 32, "height": 32, "max_range": 20.0,
    "T_cam_lidar": {"R": [0,-1,0, 0,0,-1, 1,0,0], "t": [0,0,0]}
  },
  "lidar": {"channels": 6, "vfov_deg": 30.0, "hfov_deg": 90.0, "azimuth_steps": 48, "rate_hz": 5.0},
  "events": {"threshold": 0.2, "substeps": 8, "noise_rate": 0.0},
  "trajectory": [
    {"t": 0.0, "pos": [0,0,0], "rpy_deg": [0,0,0]},
    {"t": 0.4, "pos": [0.12, 0.02, 0.15], "rpy_deg": [0,0,1.0]}
  ],
  "objects": [
    {"type": "plane", "center": [0,0,12], "rpy_deg": [0,0,0], "extent": [60,40],
     "texture": {"kind": "checker", "scale": 1.5, "contrast": 0.7}, "albedo": 0.7},
    {"type": "plane", "center": [0.0, 1.5, 9.5625], "rpy_deg": [-61.93, 0, 0],
     "extent": [40, 8], "texture": {"kind": "sine", "scale": 0.8, "contrast": 0.8},
     "albedo": 0.55}
  ]
})json";

fs::path write_scene(const TempTree& tree) {
  const fs::path p = tree.root / "scene.json";
  std::ofstream f(p);
  f << kTinySceneJson;
  return p;
}

}  // namespace

TEST_CASE("version and error strings are always available") {
  CHECK(std::strlen(aled_version()) > 0);
  CHECK(aled_last_error() != nullptr);
}

TEST_CASE("model create, save, load round trip through the C surface") {
  TempTree tree("model");
  aled_model* model = nullptr;
  REQUIRE(aled_model_create("base_channels = 4\nbins = 5\n", 42, &model) == ALED_OK);
  REQUIRE(model != nullptr);
  CHECK(aled_model_param_count(model) > 0);

  const fs::path ckpt = tree.root / "model.ckpt";
  REQUIRE(aled_model_save(model, ckpt.string().c_str()) == ALED_OK);
  aled_model* back = nullptr;
  REQUIRE(aled_model_load(ckpt.string().c_str(), &back) == ALED_OK);
  CHECK(aled_model_param_count(back) == aled_model_param_count(model));
  aled_model_free(back);
  aled_model_free(model);
}

TEST_CASE("unknown model config keys are usage errors with a message") {
  aled_model* model = nullptr;
  CHECK(aled_model_create("channels = 4\n", 1, &model) == ALED_ERR_USAGE);
  CHECK(std::string(aled_last_error()).find("channels") != std::string::npos);
}

TEST_CASE("stepping a model through the C API is deterministic") {
  aled_model* model = nullptr;
  REQUIRE(aled_model_create("base_channels = 4\n", 7, &model) == ALED_OK);

  const int w = 32, h = 32;
  std::vector<float> lidar(static_cast<std::size_t>(w) * h, 0.0f);
  lidar[static_cast<std::size_t>(16) * w + 16] = 5.0f;
  std::vector<aled_event> events{{10, 12, 100, +1}, {11, 12, 350, -1}, {12, 12, 820, +1}};
  std::vector<float> bf_a(lidar.size()), af_a(lidar.size());
  std::vector<float> bf_b(lidar.size()), af_b(lidar.size());

  for (auto out : {std::pair{&bf_a, &af_a}, std::pair{&bf_b, &af_b}}) {
    aled_state* state = nullptr;
    REQUIRE(aled_state_create(model, w, h, 20.0, &state) == ALED_OK);
    REQUIRE(aled_step(model, state, lidar.data(), events.data(), events.size(), 0, 1000,
                      out.first->data(), out.second->data()) == ALED_OK);
    aled_state_free(state);
  }
  CHECK(bf_a == bf_b);
  CHECK(af_a == af_b);
  for (float v : bf_a) {
    CHECK(v >= 0.0f);
    CHECK(v <= 20.0f);
  }

  aled_state* state = nullptr;
  CHECK(aled_state_create(model, 30, 32, 20.0, &state) == ALED_ERR_USAGE);
  aled_model_free(model);
}

TEST_CASE("dataset generation, training, evaluation, inference and figures") {
  TempTree tree("pipeline");
  const fs::path scene = write_scene(tree);

  aled_gen_stats stats{};
  REQUIRE(aled_generate_dataset(scene.string().c_str(), (tree.root / "data").string().c_str(),
                                -1, &stats) == ALED_OK);
  CHECK(stats.records == 4);
  CHECK(stats.scans == 2);
  CHECK(stats.events > 0);

  // missing parent directory is a data error
  aled_gen_stats ignored{};
  CHECK(aled_generate_dataset(scene.string().c_str(),
                              (tree.root / "no" / "parent").string().c_str(), -1,
                              &ignored) == ALED_ERR_DATA);

  const std::string config =
      "base_channels = 4\nbins = 5\nbatch_size = 1\nepochs = 2\ntbptt_len = 2\n"
      "learning_rate = 5e-4\nseed = 3\ncrop = 0\nhflip_prob = 0.5\n";
  REQUIRE(aled_train((tree.root / "data").string().c_str(), (tree.root / "run").string().c_str(),
                     config.c_str(), nullptr, nullptr, nullptr) == ALED_OK);
  CHECK(fs::exists(tree.root / "run" / "train_log.tsv"));
  CHECK(fs::exists(tree.root / "run" / "config_used.kv"));
  CHECK(fs::exists(tree.root / "run" / "checkpoint_epoch_001.ckpt"));
  CHECK(fs::exists(tree.root / "run" / "checkpoint_epoch_002.ckpt"));

  // training log has one tab-separated line per update
  {
    std::ifstream log(tree.root / "run" / "train_log.tsv");
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) {
      CHECK(std::count(line.begin(), line.end(), '\t') == 4);
      ++lines;
    }
    CHECK(lines >= 4);  // 2 epochs x 2 chunks
  }

  const fs::path ckpt = tree.root / "run" / "checkpoint_epoch_002.ckpt";

  char* report = nullptr;
  REQUIRE(aled_evaluate(ckpt.string().c_str(), (tree.root / "data").string().c_str(),
                        "cutoffs = 10,20\ntau = 1\n", &report) == ALED_OK);
  REQUIRE(report != nullptr);
  CHECK(std::string(report).find("cutoff_m") != std::string::npos);
  aled_string_free(report);

  // nn-only path needs no checkpoint
  report = nullptr;
  REQUIRE(aled_evaluate(nullptr, (tree.root / "data").string().c_str(),
                        "nn_only = 1\n", &report) == ALED_OK);
  CHECK(std::string(report).find("sparse_nn_bf") != std::string::npos);
  aled_string_free(report);

  // oracle mode reports zero dense error at every populated cell
  report = nullptr;
  REQUIRE(aled_evaluate(nullptr, (tree.root / "data").string().c_str(),
                        "oracle = 1\ncutoffs = 20\n", &report) == ALED_OK);
  {
    std::istringstream in(report);
    std::string line;
    bool saw_row = false;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#' || line.rfind("cutoff_m", 0) == 0) continue;
      saw_row = true;
      std::istringstream cells(line);
      std::string cell;
      std::vector<std::string> row;
      while (std::getline(cells, cell, '\t')) row.push_back(cell);
      REQUIRE(row.size() == 11);
      if (row[1] != "-") CHECK(std::stod(row[1]) == 0.0);
      if (row[10] != "-") CHECK(std::stod(row[10]) == 100.0);
    }
    CHECK(saw_row);
  }
  aled_string_free(report);

  // missing checkpoint without nn_only/oracle is a usage error
  CHECK(aled_evaluate(nullptr, (tree.root / "data").string().c_str(), nullptr, &report) ==
        ALED_ERR_USAGE);

  REQUIRE(aled_infer(ckpt.string().c_str(), (tree.root / "data").string().c_str(),
                     (tree.root / "viz").string().c_str(), "tau = 1\nrange = 0:20\n") == ALED_OK);
  CHECK(fs::exists(tree.root / "viz" / "infer.json"));
  CHECK(fs::exists(tree.root / "viz" / "step_0000_bf.bin"));
  CHECK(fs::exists(tree.root / "viz" / "step_0000_af.bin"));
  CHECK(fs::exists(tree.root / "viz" / "step_0000_events.png"));
  CHECK(fs::exists(tree.root / "viz" / "step_0000_change.png"));
  CHECK(fs::file_size(tree.root / "viz" / "step_0000_bf.bin") == 32 * 32 * 4);

  REQUIRE(aled_render_figures((tree.root / "viz").string().c_str(), nullptr) == ALED_OK);
  CHECK(fs::exists(tree.root / "viz" / "step_0000_panel.png"));
  CHECK(fs::exists(tree.root / "viz" / "step_0003_panel.png"));

  // resume training from the final checkpoint
  REQUIRE(aled_train((tree.root / "data").string().c_str(),
                     (tree.root / "run2").string().c_str(),
                     "base_channels = 4\nbins = 5\nbatch_size = 1\nepochs = 3\ntbptt_len = 2\n"
                     "learning_rate = 5e-4\nseed = 3\n",
                     ckpt.string().c_str(), nullptr, nullptr) == ALED_OK);
  CHECK(fs::exists(tree.root / "run2" / "checkpoint_epoch_003.ckpt"));
}

TEST_CASE("bad paths surface as data errors with messages") {
  aled_model* model = nullptr;
  CHECK(aled_model_load("/nonexistent/path.ckpt", &model) == ALED_ERR_DATA);
  CHECK(std::string(aled_last_error()).find("path.ckpt") != std::string::npos);

  char* report = nullptr;
  CHECK(aled_evaluate(nullptr, "/nonexistent/data", "oracle = 1\n", &report) == ALED_ERR_DATA);
}
