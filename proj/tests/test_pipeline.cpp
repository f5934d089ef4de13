#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>
#include <sstream>

#include "core/io_util.hpp"
#include "core/pipeline.hpp"

using namespace scpc;
using namespace scpc::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("scpc_pipe_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig tiny_config(const fs::path& out_dir) {
  RunConfig config;
  config.set("out_dir", out_dir.string());
  config.set("seed", "5");
  config.set("data.points", "64");
  config.set("data.train_count", "6");
  config.set("data.test_count", "6");
  config.set("patch.count", "6");
  config.set("patch.k", "5");
  config.set("e1.widths", "8,8");
  config.set("e1.out_dim", "6");
  config.set("e1.knn_k", "4");
  config.set("e2.widths", "8,8");
  config.set("e2.out_dim", "12");
  config.set("e2.knn_k", "4");
  config.set("sim.epochs", "2");
  config.set("sim.max_clouds", "3");
  config.set("con.epochs", "3");
  config.set("con.max_clouds", "3");
  config.set("anneal.warmup_epochs", "1");
  config.set("anneal.interval_epochs", "1");
  config.set("probe.epochs", "40");
  return config;
}

std::string file_bytes(const fs::path& path) { return read_text_file(path); }

}  // namespace

TEST_CASE("config rejects unknown keys and bad values") {
  RunConfig config;
  CHECK_THROWS_AS(config.set("no.such.key", "1"), std::invalid_argument);
  CHECK_THROWS_AS(config.set("sim.epochs", "three"), std::invalid_argument);
  CHECK_THROWS_AS(config.set("mining.enabled", "maybe"),
                  std::invalid_argument);
  CHECK_NOTHROW(config.set("sim.epochs", "12"));
  CHECK(config.get("sim.epochs") == "12");
}

TEST_CASE("config defaults validate") {
  RunConfig config;
  CHECK_NOTHROW(config.validate());
}

TEST_CASE("config validation catches cross-field problems") {
  RunConfig config;
  config.set("data.kinds", "sphere,banana");
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);

  RunConfig reach;
  reach.set("data.points", "16");
  reach.set("patch.k", "10");
  reach.set("patch.dilation", "2");
  CHECK_THROWS_AS(reach.validate(), std::invalid_argument);

  RunConfig stages;
  stages.set("pipeline.stages", "gen,ablate");
  CHECK_THROWS_AS(stages.validate(), std::invalid_argument);
}

TEST_CASE("config hash ignores the output directory") {
  RunConfig a;
  RunConfig b;
  b.set("out_dir", "/somewhere/else");
  CHECK(a.hash() == b.hash());
  b.set("seed", "99");
  CHECK(a.hash() != b.hash());
}

TEST_CASE("config files support comments and overrides") {
  RunConfig config;
  config.load_text("# a comment\nsim.epochs = 7 # trailing\n\nseed=3\n", "t");
  CHECK(config.get("sim.epochs") == "7");
  CHECK(config.get("seed") == "3");
  CHECK_THROWS_AS(config.load_text("sim.epochs\n", "t"),
                  std::invalid_argument);
}

TEST_CASE("gen writes a deterministic dataset with a manifest") {
  const auto dir_a = fresh_dir("gen_a");
  const auto dir_b = fresh_dir("gen_b");
  auto config_a = tiny_config(dir_a);
  auto config_b = tiny_config(dir_b);
  cmd_gen(config_a);
  cmd_gen(config_b);

  const auto dataset = load_dataset(config_a);
  CHECK(dataset.entries.size() == 12);
  CHECK(dataset.split_indices("train").size() == 6);
  // sphere/cube/cylinder round-robin: class ids cycle.
  CHECK(dataset.entries[0].class_id == 0);
  CHECK(dataset.entries[1].class_id == 1);
  CHECK(dataset.entries[2].class_id == 2);
  CHECK(dataset.entries[2].labeled);  // cylinder carries part labels

  CHECK(file_bytes(manifest_path(config_a)) ==
        file_bytes(manifest_path(config_b)));
  for (const auto& entry : dataset.entries) {
    CHECK(file_bytes(data_dir(config_a) / entry.file) ==
          file_bytes(data_dir(config_b) / entry.file));
  }
}

TEST_CASE("training stages are bitwise reproducible across directories") {
  const auto dir_a = fresh_dir("train_a");
  const auto dir_b = fresh_dir("train_b");
  auto config_a = tiny_config(dir_a);
  auto config_b = tiny_config(dir_b);
  for (const auto* config : {&config_a, &config_b}) {
    cmd_gen(*config);
    cmd_train_sim(*config);
    cmd_train_con(*config);
    cmd_probe(*config);
  }
  CHECK(file_bytes(sim_checkpoint_path(config_a)) ==
        file_bytes(sim_checkpoint_path(config_b)));
  CHECK(file_bytes(con_checkpoint_path(config_a)) ==
        file_bytes(con_checkpoint_path(config_b)));
  CHECK(file_bytes(dir_a / "sim_loss.csv") == file_bytes(dir_b / "sim_loss.csv"));
  CHECK(file_bytes(dir_a / "con_loss.csv") == file_bytes(dir_b / "con_loss.csv"));
  CHECK(file_bytes(dir_a / "probe_metrics.csv") ==
        file_bytes(dir_b / "probe_metrics.csv"));
}

TEST_CASE("interrupted training resumes to the identical checkpoint") {
  const auto dir_full = fresh_dir("resume_full");
  const auto dir_resumed = fresh_dir("resume_split");
  auto config_full = tiny_config(dir_full);
  auto config_resumed = tiny_config(dir_resumed);

  cmd_gen(config_full);
  cmd_train_sim(config_full);
  cmd_train_con(config_full);

  cmd_gen(config_resumed);
  cmd_train_sim(config_resumed, /*epoch_limit=*/1);  // interrupt after 1 epoch
  cmd_train_sim(config_resumed);                     // resume to completion
  cmd_train_con(config_resumed, /*epoch_limit=*/2);
  cmd_train_con(config_resumed);

  CHECK(file_bytes(sim_checkpoint_path(config_full)) ==
        file_bytes(sim_checkpoint_path(config_resumed)));
  CHECK(file_bytes(con_checkpoint_path(config_full)) ==
        file_bytes(con_checkpoint_path(config_resumed)));
  CHECK(file_bytes(dir_full / "sim_loss.csv") ==
        file_bytes(dir_resumed / "sim_loss.csv"));
  CHECK(file_bytes(dir_full / "con_loss.csv") ==
        file_bytes(dir_resumed / "con_loss.csv"));
}

TEST_CASE("a checkpoint from another configuration is rejected") {
  const auto dir = fresh_dir("hash_guard");
  auto config = tiny_config(dir);
  cmd_gen(config);
  cmd_train_sim(config);
  auto changed = config;
  changed.set("seed", "6");
  CHECK_THROWS_AS(cmd_train_sim(changed), std::invalid_argument);
}

TEST_CASE("train-con without a similarity checkpoint names the missing path") {
  const auto dir = fresh_dir("missing_ckpt");
  auto config = tiny_config(dir);
  cmd_gen(config);
  try {
    cmd_train_con(config);
    FAIL("expected missing-checkpoint error");
  } catch (const std::invalid_argument& e) {
    const std::string what = e.what();
    CHECK(what.find("sim.ckpt") != std::string::npos);
    CHECK(what.find("train-sim") != std::string::npos);
  }
}

TEST_CASE("mine output matches the library mining exactly") {
  const auto dir = fresh_dir("mine");
  auto config = tiny_config(dir);
  cmd_gen(config);
  cmd_train_sim(config);
  cmd_mine(config);

  const auto model = load_similarity_model(config);
  const auto dataset = load_dataset(config);
  const auto train = dataset.split_indices("train");

  std::ostringstream expected;
  expected << "anchor,candidate,similarity,is_hard_negative\n";
  const std::size_t patch_count = 6;
  // Same thresholds cmd_mine used: mining enabled, epoch = con.epochs-1 = 2,
  // warmup 1, interval 1 -> one annealing step.
  selfsim::ThresholdSchedule schedule;
  schedule.warmup_epochs = 1;
  schedule.interval_epochs = 1;
  const auto [lower, upper] = selfsim::thresholds_at(schedule, 2);
  for (std::size_t c = 0; c < 3; ++c) {  // con.max_clouds = 3
    const auto& cloud = dataset.clouds[train[c]];
    const auto patches = selfsim::sample_patches(cloud, patch_count, 5);
    for (std::size_t anchor = 0; anchor < patches.size(); ++anchor) {
      const auto mined = selfsim::mine_hard_negatives(model, cloud, patches,
                                                      anchor, lower, upper);
      for (std::size_t j : mined) {
        expected << c * patch_count + anchor << "," << c * patch_count + j
                 << ","
                 << format_double(patch_similarity(model, cloud,
                                                   patches[anchor], patches[j]))
                 << ",1\n";
      }
    }
  }
  CHECK(file_bytes(dir / "mine.csv") == expected.str());

  // Row count = sum of mined set sizes + header.
  std::istringstream in(file_bytes(dir / "mine.csv"));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  std::size_t mined_total = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    const auto& cloud = dataset.clouds[train[c]];
    const auto patches = selfsim::sample_patches(cloud, patch_count, 5);
    for (std::size_t anchor = 0; anchor < patches.size(); ++anchor)
      mined_total +=
          selfsim::mine_hard_negatives(model, cloud, patches, anchor, lower,
                                       upper)
              .size();
  }
  CHECK(rows == mined_total + 1);
}

TEST_CASE("probe leaves the encoder checkpoint untouched") {
  const auto dir = fresh_dir("frozen");
  auto config = tiny_config(dir);
  cmd_gen(config);
  cmd_train_sim(config);
  cmd_train_con(config);
  const std::string before = file_bytes(con_checkpoint_path(config));
  cmd_probe(config);
  CHECK(file_bytes(con_checkpoint_path(config)) == before);
}

TEST_CASE("segmentation probe and sweep work on labeled kinds") {
  const auto dir = fresh_dir("seg");
  auto config = tiny_config(dir);
  config.set("data.kinds", "cylinder,cross");
  config.set("data.points", "96");
  config.set("seg.epochs", "60");
  config.set("sweep.task", "segmentation");
  config.set("sweep.levels", "0,0.02");
  cmd_gen(config);
  cmd_train_sim(config);
  cmd_train_con(config);
  cmd_seg_probe(config);

  const std::string metrics = file_bytes(dir / "seg_metrics.csv");
  CHECK(metrics.find("segmentation,test,miou") != std::string::npos);

  cmd_sweep(config);
  // Level zero must equal the clean test metric bitwise.
  std::istringstream metrics_in(metrics);
  std::string line, clean_value;
  while (std::getline(metrics_in, line)) {
    if (line.find(",test,miou,") != std::string::npos)
      clean_value = line.substr(line.rfind(',') + 1);
  }
  REQUIRE_FALSE(clean_value.empty());
  std::istringstream sweep_in(file_bytes(dir / "sweep.csv"));
  std::getline(sweep_in, line);  // header
  std::getline(sweep_in, line);  // level 0
  CHECK(line == "0," + clean_value);
}

TEST_CASE("classification sweep level zero reproduces the clean accuracy") {
  const auto dir = fresh_dir("sweep_cls");
  auto config = tiny_config(dir);
  config.set("sweep.levels", "0,0.05");
  cmd_gen(config);
  cmd_train_sim(config);
  cmd_train_con(config);
  cmd_probe(config);
  cmd_sweep(config);

  std::string clean_value;
  std::istringstream metrics_in(file_bytes(dir / "probe_metrics.csv"));
  std::string line;
  while (std::getline(metrics_in, line)) {
    if (line.find(",test,accuracy,") != std::string::npos)
      clean_value = line.substr(line.rfind(',') + 1);
  }
  REQUIRE_FALSE(clean_value.empty());
  std::istringstream sweep_in(file_bytes(dir / "sweep.csv"));
  std::getline(sweep_in, line);
  std::getline(sweep_in, line);
  CHECK(line == "0," + clean_value);
}

TEST_CASE("ablate emits paired runs plus a delta row") {
  const auto dir = fresh_dir("ablate");
  auto config = tiny_config(dir);
  config.set("con.epochs", "2");
  config.set("probe.epochs", "25");
  cmd_ablate(config);

  const std::string csv = file_bytes(dir / "ablate.csv");
  std::istringstream in(csv);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 4);  // header + with + without + delta
  CHECK(lines[0] == "run_id,task,split,metric,value");
  CHECK(lines[3].rfind("delta,", 0) == 0);
  // Delta printed to 4 decimals.
  const std::string delta = lines[3].substr(lines[3].rfind(',') + 1);
  const auto dot = delta.find('.');
  REQUIRE(dot != std::string::npos);
  CHECK(delta.size() - dot - 1 == 4);

  // Paired configs differ exactly in the mining flag.
  const std::string with_hn =
      file_bytes(dir / "ablate_with_hn" / "config.resolved");
  const std::string without_hn =
      file_bytes(dir / "ablate_without_hn" / "config.resolved");
  std::istringstream a(with_hn), b(without_hn);
  std::string la, lb;
  int mismatches = 0;
  std::string which;
  while (std::getline(a, la) && std::getline(b, lb)) {
    if (la != lb) {
      ++mismatches;
      which = la;
    }
  }
  // config hash comment + mining.enabled + out_dir differ
  CHECK(mismatches == 3);
  CHECK(with_hn.find("mining.enabled=true") != std::string::npos);
  CHECK(without_hn.find("mining.enabled=false") != std::string::npos);

  // Both runs completed with metrics in range.
  for (int row = 1; row <= 2; ++row) {
    const double value = std::stod(lines[row].substr(lines[row].rfind(',') + 1));
    CHECK(value >= 0.0);
    CHECK(value <= 1.0);
  }
}

TEST_CASE("gen validates before writing anything") {
  const auto dir = fresh_dir("validate_first");
  RunConfig config = tiny_config(dir / "sub");
  config.set("data.kinds", "sphere,unknown_kind");
  CHECK_THROWS_AS(cmd_gen(config), std::invalid_argument);
  CHECK_FALSE(fs::exists(dir / "sub"));
}
