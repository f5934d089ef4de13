// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Runs against the library directly, except the ablation harness,
// which drives the installed CLI binary (path from SCPC_CLI).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "core/checkpoint.hpp"
#include "core/contrastive.hpp"
#include "core/eval.hpp"
#include "core/gradcheck.hpp"
#include "core/io_util.hpp"
#include "core/pipeline.hpp"
#include "core/rng.hpp"
#include "core/selfsim.hpp"

namespace fs = std::filesystem;
using namespace scpc;
using geometry::Patch;
using geometry::PointCloud;
using geometry::Vec3;

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("scpc_accept_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string file_bytes(const fs::path& path) { return read_text_file(path); }

// Pulls one metric value (as the verbatim CSV field) out of a
// run_id,task,split,metric,value file.
std::string metric_field(const fs::path& csv, const std::string& split,
                         const std::string& metric) {
  std::istringstream in(file_bytes(csv));
  std::string line;
  const std::string needle = "," + split + "," + metric + ",";
  while (std::getline(in, line)) {
    if (line.find(needle) != std::string::npos)
      return line.substr(line.rfind(',') + 1);
  }
  throw std::runtime_error("metric " + split + "/" + metric + " not found in " +
                           csv.string());
}

// ---- engineered self-similarity clouds (criterion 4) ----------------------

// Spherical-shell template: statistically rotation invariant as a point set,
// so rotated copies stay aligned in feature space while the distractors
// differ in scale and structure.
std::vector<Vec3> shell_template(Rng& rng) {
  std::vector<Vec3> pts;
  const double radius = 0.3;
  for (int i = 0; i < 12; ++i) {
    Vec3 p = {rng.normal(), rng.normal(), rng.normal()};
    const double n = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    pts.push_back({radius * p[0] / n, radius * p[1] / n, radius * p[2] / n});
  }
  const Vec3 c = geometry::centroid(pts);
  for (auto& p : pts) {
    p[0] -= c[0];
    p[1] -= c[1];
    p[2] -= c[2];
  }
  return pts;
}

std::vector<Vec3> distractor(Rng& rng, int variant) {
  std::vector<Vec3> pts;
  if (variant == 0) {  // tight blob
    for (int i = 0; i < 12; ++i)
      pts.push_back(
          {0.06 * rng.normal(), 0.06 * rng.normal(), 0.06 * rng.normal()});
  } else if (variant == 1) {  // wide blob
    for (int i = 0; i < 12; ++i)
      pts.push_back(
          {0.7 * rng.normal(), 0.7 * rng.normal(), 0.7 * rng.normal()});
  } else {  // two separated clusters
    Vec3 dir = {rng.normal(), rng.normal(), rng.normal()};
    const double n =
        std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
    for (int i = 0; i < 12; ++i) {
      const double t = i < 6 ? -0.5 : 0.5;
      pts.push_back({t * dir[0] / n + 0.05 * rng.normal(),
                     t * dir[1] / n + 0.05 * rng.normal(),
                     t * dir[2] / n + 0.05 * rng.normal()});
    }
  }
  return pts;
}

Patch group_patch(const PointCloud& cloud, std::size_t begin,
                  std::size_t count) {
  std::vector<Vec3> coords(cloud.points.begin() + begin,
                           cloud.points.begin() + begin + count);
  const Vec3 c = geometry::centroid(coords);
  std::size_t center = begin;
  double best = 1e300;
  for (std::size_t i = begin; i < begin + count; ++i) {
    const double d = geometry::squared_distance(cloud.points[i], c);
    if (d < best) {
      best = d;
      center = i;
    }
  }
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t i = begin; i < begin + count; ++i) {
    if (i == center) continue;
    order.emplace_back(
        geometry::squared_distance(cloud.points[i], cloud.points[center]), i);
  }
  std::sort(order.begin(), order.end());
  Patch patch;
  patch.center = center;
  patch.members.push_back(center);
  for (const auto& [d, i] : order) patch.members.push_back(i);
  return patch;
}

struct SelfSimCloud {
  PointCloud cloud;
  std::vector<Patch> patches;  // 0..3 template copies, 4..15 distractors
};

SelfSimCloud make_selfsim_cloud(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xabcdull));
  const auto tmpl = shell_template(rng);
  SelfSimCloud out;
  std::vector<Vec3> centers;
  for (int i = 0; i < 16; ++i) {  // golden-angle spiral, radius 3
    const double z = -1.0 + 2.0 * (i + 0.5) / 16.0;
    const double phi = 2.39996322972865332 * i;
    const double r = std::sqrt(1 - z * z);
    centers.push_back({3 * r * std::cos(phi), 3 * r * std::sin(phi), 3 * z});
  }
  for (int g = 0; g < 16; ++g) {
    std::vector<Vec3> pts;
    if (g < 4) {
      const auto rot = geometry::rotation_from_axis_angle(
          {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)},
          rng.uniform(0, 6.283185307179586), {0, 0, 0});
      for (const auto& p : tmpl) {
        Vec3 q;
        for (int r = 0; r < 3; ++r) {
          q[r] = rot.matrix[r][0] * p[0] + rot.matrix[r][1] * p[1] +
                 rot.matrix[r][2] * p[2];
        }
        pts.push_back(
            {q[0] + centers[g][0], q[1] + centers[g][1], q[2] + centers[g][2]});
      }
    } else {
      for (auto p : distractor(rng, g % 3)) {
        pts.push_back(
            {p[0] + centers[g][0], p[1] + centers[g][1], p[2] + centers[g][2]});
      }
    }
    for (const auto& p : pts) out.cloud.points.push_back(p);
  }
  for (int g = 0; g < 16; ++g)
    out.patches.push_back(group_patch(out.cloud, g * 12, 12));
  return out;
}

// ---- shared tiny configs ---------------------------------------------------

pipeline::RunConfig tiny_run(const fs::path& out) {
  pipeline::RunConfig config;
  config.set("out_dir", out.string());
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

encoders::EncoderConfig small_e1() {
  encoders::EncoderConfig config;
  config.channel_widths = {8, 8};
  config.knn_k = 4;
  config.output_dim = 6;
  return config;
}

// ---- criteria --------------------------------------------------------------

struct Criterion {
  int id;
  std::string name;
  std::function<std::string()> run;  // returns detail, throws on failure
};

void require(bool condition, const std::string& message) {
  if (!condition) throw std::runtime_error(message);
}

std::string criterion_gradients() {
  const auto start = std::chrono::steady_clock::now();
  const auto results = autodiff::gradcheck::run_all();
  const double elapsed = seconds_since(start);
  double worst = 0.0;
  for (const auto& r : results) {
    worst = std::max(worst, r.max_rel_error);
    require(r.passed, "op '" + r.name + "' failed with max relative error " +
                          format_double(r.max_rel_error, 3));
  }
  require(elapsed < 60.0, "suite took " + format_double(elapsed, 3) + "s");
  require(results.size() >= 25, "too few checks ran");
  return std::to_string(results.size()) + " checks, worst rel err " +
         format_double(worst, 2) + ", " + format_double(elapsed, 2) + "s";
}

std::string criterion_oracles() {
  int fps_instances = 0, knn_instances = 0, dilated_instances = 0;

  // Independent references: per-step recomputed max-min distances for FPS,
  // full (distance, index) sort for kNN.
  auto knn_oracle = [](const PointCloud& cloud, std::size_t query,
                       std::size_t k) {
    std::vector<std::pair<double, std::size_t>> order;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      if (i == query) continue;
      order.emplace_back(
          geometry::squared_distance(cloud.points[i], cloud.points[query]), i);
    }
    std::sort(order.begin(), order.end());
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(order[i].second);
    return out;
  };
  auto fps_oracle = [](const PointCloud& cloud, std::size_t m,
                       std::size_t first) {
    std::vector<std::size_t> centers = {first};
    while (centers.size() < m) {
      std::size_t best = cloud.size();
      double best_min = -1.0;
      for (std::size_t i = 0; i < cloud.size(); ++i) {
        bool chosen = false;
        for (std::size_t c : centers) chosen = chosen || c == i;
        if (chosen) continue;
        double min_d2 = 1e300;
        for (std::size_t c : centers) {
          min_d2 = std::min(min_d2, geometry::squared_distance(
                                        cloud.points[i], cloud.points[c]));
        }
        if (min_d2 > best_min) {
          best_min = min_d2;
          best = i;
        }
      }
      centers.push_back(best);
    }
    return centers;
  };

  for (std::uint64_t trial = 1; trial <= 110; ++trial) {
    Rng rng(mix_seed(0xace1ull, trial));
    const std::size_t n = 2 + rng.uniform_index(63);  // 2..64
    PointCloud cloud;
    for (std::size_t i = 0; i < n; ++i) {
      cloud.points.push_back(
          {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    }
    const std::size_t m = 1 + rng.uniform_index(n);
    for (std::uint64_t pick : {std::uint64_t{0}, trial}) {
      const auto got = geometry::farthest_point_sample(cloud, m, pick);
      require(got == fps_oracle(cloud, m, got[0]),
              "fps mismatch at trial " + std::to_string(trial));
      ++fps_instances;
    }
    for (int rep = 0; rep < 2 && n >= 2; ++rep) {
      const std::size_t query = rng.uniform_index(n);
      const std::size_t k = 1 + rng.uniform_index(n - 1);
      require(geometry::knn(cloud, query, k) == knn_oracle(cloud, query, k),
              "knn mismatch at trial " + std::to_string(trial));
      ++knn_instances;
    }
    if (n >= 13) {
      const std::size_t k = 1 + rng.uniform_index(5);
      const int d = 2 + static_cast<int>(rng.uniform_index(2));
      if (k * d <= n - 1) {
        const std::size_t center = rng.uniform_index(n);
        const auto patch = geometry::dilated_patch(cloud, center, k, d);
        const auto ranked = knn_oracle(cloud, center, k * d);
        for (std::size_t i = 0; i < k; ++i) {
          require(patch.members[i + 1] == ranked[(i + 1) * d - 1],
                  "dilated rank mismatch at trial " + std::to_string(trial));
        }
        ++dilated_instances;
      }
    }
  }
  require(fps_instances >= 200, "not enough fps instances");
  require(knn_instances >= 200, "not enough knn instances");
  require(dilated_instances >= 50, "not enough dilated instances");
  return std::to_string(fps_instances) + " fps + " +
         std::to_string(knn_instances) + " knn + " +
         std::to_string(dilated_instances) + " dilated instances, 0 mismatches";
}

std::string criterion_loss_values() {
  const double ln2 = std::log(2.0);
  const double uniform = selfsim::similarity_loss(
      std::vector<double>{0.5, 0.5}, std::vector<double>{0.5, 0.5, 0.5});
  require(std::abs(uniform - ln2) < 1e-9, "uniform-score loss != ln 2");
  const double perfect = selfsim::similarity_loss(std::vector<double>{1.0},
                                                  std::vector<double>{0.0});
  require(std::abs(perfect) < 1e-9, "perfect-score loss != 0");

  const std::vector<double> anchor = {1.0, 0.0};
  const std::vector<double> some_positive = {0.3, 0.4};
  require(std::abs(contrastive::info_nce_loss(anchor, some_positive, {},
                                              0.1)) < 1e-9,
          "empty-negative loss != 0");
  const std::vector<double> tied_positive = {0.7, 0.1};
  const double tied = contrastive::info_nce_loss(
      anchor, tied_positive, {{0.7, -0.5}}, 0.25);
  require(std::abs(tied - ln2) < 1e-9, "tied one-negative loss != ln 2");
  const std::vector<double> aligned_positive = {1.0, 0.0};
  const double reference = contrastive::info_nce_loss(
      anchor, aligned_positive, {{0.0, 1.0}}, 1.0);
  const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  require(std::abs(reference - expected) < 1e-9,
          "tau=1 pos=1 neg=0 loss mismatch");
  return "similarity loss and contrastive loss match the closed forms";
}

std::string criterion_similarity_sanity() {
  int hits = 0, anchors = 0;
  double worst_seed_seconds = 0.0;
  const int epochs = 48;
  require(epochs <= 128, "epoch budget breached");
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<PointCloud> clouds;
    std::vector<std::vector<Patch>> patches;
    for (int c = 0; c < 6; ++c) {
      auto sc = make_selfsim_cloud(seed * 100 + c);
      clouds.push_back(std::move(sc.cloud));
      patches.push_back(std::move(sc.patches));
    }
    encoders::EncoderConfig e1;
    e1.channel_widths = {16, 16};
    e1.knn_k = 11;
    e1.output_dim = 12;
    auto model = selfsim::SimilarityModel::create(e1, seed);

    selfsim::TrainConfig config;
    config.epochs = epochs;
    config.batch_clouds = 2;
    config.lr = {0.001, 0.8, 20};
    config.seed = seed;
    autodiff::AdamState adam(model.params, config.lr.initial_lr);
    selfsim::train_similarity(clouds, patches, model, config, adam);

    for (std::size_t c = 0; c < clouds.size(); ++c) {
      const auto table =
          selfsim::similarity_matrix(model, clouds[c], patches[c]);
      for (int a = 0; a < 4; ++a) {
        double copy_mean = 0.0, unrelated_mean = 0.0;
        for (int j = 0; j < 4; ++j) {
          if (j != a) copy_mean += table[a][j] / 3.0;
        }
        for (int j = 4; j < 16; ++j) unrelated_mean += table[a][j] / 12.0;
        if (copy_mean - unrelated_mean >= 0.1) ++hits;
        ++anchors;
      }
    }
    worst_seed_seconds = std::max(worst_seed_seconds, seconds_since(start));
  }
  require(worst_seed_seconds < 300.0, "a seed exceeded the 5-minute budget");
  const double fraction =
      static_cast<double>(hits) / static_cast<double>(anchors);
  require(fraction >= 0.8,
          "margin >= 0.1 on only " + format_double(100 * fraction, 3) +
              "% of anchors");
  return std::to_string(hits) + "/" + std::to_string(anchors) +
         " anchors with margin >= 0.1 (" + format_double(100 * fraction, 3) +
         "%), slowest seed " + format_double(worst_seed_seconds, 2) + "s";
}

std::string criterion_mining() {
  int settings = 0;
  for (std::uint64_t trial = 1; trial <= 25; ++trial) {
    Rng rng(mix_seed(0x3141ull, trial));
    const auto model =
        selfsim::SimilarityModel::create(small_e1(), trial * 13 + 1);
    PointCloud cloud;
    for (int i = 0; i < 40; ++i) {
      cloud.points.push_back(
          {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    }
    const auto patches = selfsim::sample_patches(cloud, 8, 5);

    for (int rep = 0; rep < 2; ++rep) {
      double lower = rng.uniform(0.0, 0.9);
      double upper = std::min(1.0, lower + rng.uniform(0.02, 0.4));
      const std::size_t anchor = rng.uniform_index(patches.size());
      const auto mined = selfsim::mine_hard_negatives(model, cloud, patches,
                                                      anchor, lower, upper);
      std::vector<std::size_t> expected;
      for (std::size_t j = 0; j < patches.size(); ++j) {
        if (j == anchor) continue;
        const double s =
            selfsim::patch_similarity(model, cloud, patches[anchor], patches[j]);
        if (s >= lower && s <= upper) expected.push_back(j);
      }
      require(mined == expected,
              "mining mismatch at trial " + std::to_string(trial));
      ++settings;
    }

    // Warmup thresholds hand back the full complement.
    const auto full =
        selfsim::mine_hard_negatives(model, cloud, patches, 0, 0.0, 1.0);
    require(full.size() == patches.size() - 1,
            "warmup interval did not return the complement");
  }
  require(settings >= 50, "not enough threshold settings");
  return std::to_string(settings) +
         " random (model, threshold) settings match the brute-force filter";
}

std::string criterion_annealing() {
  selfsim::ThresholdSchedule schedule;  // desk defaults
  double last_lower = -1.0, last_upper = 2.0;
  for (int epoch = 0; epoch <= 100; ++epoch) {
    const auto [lower, upper] = selfsim::thresholds_at(schedule, epoch);
    require(lower >= last_lower, "lower threshold decreased");
    require(upper <= last_upper, "upper threshold increased");
    require(upper - lower >= schedule.min_gap - 1e-12, "gap below min_gap");
    last_lower = lower;
    last_upper = upper;
  }

  // Mean negative-set size on a fixed cloud set, evaluated at each epoch's
  // thresholds with a frozen similarity model.
  const auto model = selfsim::SimilarityModel::create(small_e1(), 77);
  std::vector<std::vector<std::vector<double>>> tables;
  std::vector<std::size_t> patch_counts;
  for (std::uint64_t c = 0; c < 4; ++c) {
    Rng rng(mix_seed(0x600dull, c));
    PointCloud cloud;
    for (int i = 0; i < 48; ++i) {
      cloud.points.push_back(
          {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    }
    const auto patches = selfsim::sample_patches(cloud, 8, 5);
    tables.push_back(selfsim::similarity_matrix(model, cloud, patches));
    patch_counts.push_back(patches.size());
  }
  double last_mean = 1e300;
  for (int epoch = 0; epoch <= 100; ++epoch) {
    const auto [lower, upper] = selfsim::thresholds_at(schedule, epoch);
    std::size_t total = 0, anchors = 0;
    for (std::size_t c = 0; c < tables.size(); ++c) {
      for (std::size_t a = 0; a < patch_counts[c]; ++a) {
        total += selfsim::mine_from_matrix(tables[c], a, lower, upper).size();
        ++anchors;
      }
    }
    const double mean = static_cast<double>(total) / anchors;
    require(mean <= last_mean + 1e-12,
            "mean negative-set size increased at epoch " +
                std::to_string(epoch));
    last_mean = mean;
  }
  return "thresholds monotone with gap >= min_gap over 101 epochs; mean "
         "negative-set size non-increasing";
}

std::string criterion_transfer_probe() {
  const auto start = std::chrono::steady_clock::now();
  const auto dir = fresh_dir("transfer");
  pipeline::RunConfig config;
  config.set("out_dir", dir.string());
  config.set("seed", "7");
  config.set("data.kinds", "sphere,cube,cylinder");
  config.set("data.points", "256");
  config.set("data.sigma", "0.02");
  config.set("data.train_count", "200");
  config.set("data.test_count", "100");
  config.set("sim.epochs", "12");
  config.set("sim.max_clouds", "6");
  config.set("con.epochs", "20");
  config.set("con.max_clouds", "6");
  config.set("anneal.warmup_epochs", "6");
  config.set("anneal.interval_epochs", "2");
  config.set("pipeline.stages", "gen,train-sim,mine,train-con,probe");
  pipeline::cmd_pipeline(config);

  const double accuracy =
      std::stod(metric_field(dir / "probe_metrics.csv", "test", "accuracy"));
  const double elapsed = seconds_since(start);
  require(accuracy >= 0.90, "test accuracy " + format_double(accuracy, 4) +
                                " below 0.90");
  require(elapsed < 600.0, "pipeline took " + format_double(elapsed, 4) + "s");
  return "3-class probe accuracy " + format_double(accuracy, 4) + " in " +
         format_double(elapsed, 3) + "s";
}

std::string criterion_segmentation() {
  const auto start = std::chrono::steady_clock::now();
  const auto dir = fresh_dir("segmentation");
  pipeline::RunConfig config;
  config.set("out_dir", dir.string());
  config.set("seed", "11");
  config.set("data.kinds", "cylinder,cross");
  config.set("data.points", "256");
  config.set("data.sigma", "0.01");
  config.set("data.train_count", "40");
  config.set("data.test_count", "16");
  config.set("sim.epochs", "12");
  config.set("sim.max_clouds", "6");
  config.set("con.epochs", "20");
  config.set("con.max_clouds", "6");
  config.set("anneal.warmup_epochs", "6");
  config.set("anneal.interval_epochs", "2");
  config.set("sweep.task", "segmentation");
  config.set("sweep.levels", "0,0.02,0.05");
  config.set("pipeline.stages", "gen,train-sim,train-con,seg-probe,sweep");
  pipeline::cmd_pipeline(config);

  const std::string clean =
      metric_field(dir / "seg_metrics.csv", "test", "miou");
  const double miou = std::stod(clean);
  require(miou >= 0.70, "test mIoU " + format_double(miou, 4) + " below 0.70");

  std::istringstream sweep(file_bytes(dir / "sweep.csv"));
  std::string line;
  std::getline(sweep, line);  // header
  std::getline(sweep, line);  // level 0
  require(line == "0," + clean,
          "sigma=0 sweep row '" + line + "' differs from clean metric");
  const double elapsed = seconds_since(start);
  return "point-wise head mIoU " + format_double(miou, 4) +
         ", sigma=0 sweep row bitwise equal, " + format_double(elapsed, 3) +
         "s";
}

std::string criterion_ablation() {
  const char* cli_env = std::getenv("SCPC_CLI");
  require(cli_env != nullptr && fs::exists(cli_env),
          "SCPC_CLI must point at the CLI binary");
  const auto dir = fresh_dir("ablate");

  std::ostringstream command;
  command << '"' << cli_env << '"' << " ablate"
          << " -s out_dir=" << dir.string() << " -s seed=9"
          << " -s data.points=96 -s data.train_count=12 -s data.test_count=6"
          << " -s patch.count=8 -s patch.k=6"
          << " -s e1.widths=12,12 -s e1.out_dim=8 -s e1.knn_k=6"
          << " -s e2.widths=12,12 -s e2.out_dim=16 -s e2.knn_k=6"
          << " -s sim.epochs=6 -s sim.max_clouds=4"
          << " -s con.epochs=8 -s con.max_clouds=4"
          << " -s anneal.warmup_epochs=2 -s anneal.interval_epochs=1"
          << " -s probe.epochs=80 > " << (dir / "cli_stdout.txt").string()
          << " 2>&1";
  const int exit_code = std::system(command.str().c_str());
  require(exit_code == 0, "ablate subcommand exited with " +
                              std::to_string(exit_code));

  std::istringstream in(file_bytes(dir / "ablate.csv"));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  require(lines.size() == 4, "expected header + 2 runs + delta row");
  require(lines[0] == "run_id,task,split,metric,value", "bad header");
  for (int row = 1; row <= 2; ++row) {
    const double value = std::stod(lines[row].substr(lines[row].rfind(',') + 1));
    require(value >= 0.0 && value <= 1.0, "metric outside [0,1]");
  }
  require(lines[3].rfind("delta,", 0) == 0, "missing delta row");
  const std::string delta = lines[3].substr(lines[3].rfind(',') + 1);
  require(delta.find('.') != std::string::npos &&
              delta.size() - delta.find('.') - 1 == 4,
          "delta not printed to 4 decimals");

  // Paired configs: identical seeds, differ only in the mining flag.
  const std::string with_hn =
      file_bytes(dir / "ablate_with_hn" / "config.resolved");
  const std::string without_hn =
      file_bytes(dir / "ablate_without_hn" / "config.resolved");
  require(with_hn.find("mining.enabled=true") != std::string::npos,
          "mined run flag wrong");
  require(without_hn.find("mining.enabled=false") != std::string::npos,
          "unmined run flag wrong");
  std::istringstream a(with_hn), b(without_hn);
  std::string la, lb;
  int differing = 0;
  while (std::getline(a, la) && std::getline(b, lb)) {
    if (la == lb) continue;
    const bool expected = la.rfind("mining.enabled", 0) == 0 ||
                          la.rfind("out_dir", 0) == 0 ||
                          la.rfind("# config_hash", 0) == 0;
    require(expected, "configs diverge at '" + la + "'");
    ++differing;
  }
  require(differing == 3, "unexpected config diff count");
  return "paired runs complete, delta row " + delta;
}

std::string criterion_determinism() {
  // Identical config + seed in two directories: bitwise-identical artifacts.
  const auto dir_a = fresh_dir("det_a");
  const auto dir_b = fresh_dir("det_b");
  auto config_a = tiny_run(dir_a);
  auto config_b = tiny_run(dir_b);
  for (const auto* config : {&config_a, &config_b}) {
    pipeline::cmd_gen(*config);
    pipeline::cmd_train_sim(*config);
    pipeline::cmd_train_con(*config);
    pipeline::cmd_probe(*config);
  }
  for (const char* file : {"sim.ckpt", "con.ckpt", "sim_loss.csv",
                           "con_loss.csv", "probe_metrics.csv"}) {
    require(file_bytes(dir_a / file) == file_bytes(dir_b / file),
            std::string(file) + " differs between identical runs");
  }

  // Checkpoint save -> load -> save reproduces the file byte for byte.
  const std::string original = file_bytes(dir_a / "sim.ckpt");
  const auto reloaded = autodiff::load_checkpoint(dir_a / "sim.ckpt");
  autodiff::save_checkpoint(reloaded, dir_a / "sim_roundtrip.ckpt");
  require(file_bytes(dir_a / "sim_roundtrip.ckpt") == original,
          "checkpoint round-trip changed bytes");

  // Interrupted-and-resumed training matches the uninterrupted run.
  const auto dir_c = fresh_dir("det_resume");
  auto config_c = tiny_run(dir_c);
  pipeline::cmd_gen(config_c);
  pipeline::cmd_train_sim(config_c, /*epoch_limit=*/1);
  pipeline::cmd_train_sim(config_c);
  pipeline::cmd_train_con(config_c, /*epoch_limit=*/1);
  pipeline::cmd_train_con(config_c);
  require(file_bytes(dir_c / "sim.ckpt") == file_bytes(dir_a / "sim.ckpt"),
          "resumed sim checkpoint differs");
  require(file_bytes(dir_c / "con.ckpt") == file_bytes(dir_a / "con.ckpt"),
          "resumed con checkpoint differs");
  require(file_bytes(dir_c / "con_loss.csv") ==
              file_bytes(dir_a / "con_loss.csv"),
          "resumed loss log differs");
  return "reruns, checkpoint round-trip, and resume are all bitwise identical";
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "gradient suite", criterion_gradients},
      {2, "sampling oracle equivalence", criterion_oracles},
      {3, "analytic loss values", criterion_loss_values},
      {4, "similarity sanity", criterion_similarity_sanity},
      {5, "mining correctness", criterion_mining},
      {6, "annealing contract", criterion_annealing},
      {7, "transfer-probe analogue", criterion_transfer_probe},
      {8, "segmentation analogue", criterion_segmentation},
      {9, "ablation harness", criterion_ablation},
      {10, "determinism and persistence", criterion_determinism},
  };

  int failures = 0;
  for (const auto& criterion : criteria) {
    std::string detail;
    bool passed = false;
    try {
      detail = criterion.run();
      passed = true;
    } catch (const std::exception& e) {
      detail = e.what();
    }
    std::printf("[%s] criterion %d: %s — %s\n", passed ? "PASS" : "FAIL",
                criterion.id, criterion.name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!passed) ++failures;
  }
  if (failures == 0) {
    std::printf("acceptance: all %zu criteria passed\n", criteria.size());
  } else {
    std::printf("acceptance: %d criteria FAILED\n", failures);
  }
  return failures;
}
