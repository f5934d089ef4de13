#include "core/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "core/checkpoint.hpp"
#include "core/errors.hpp"
#include "core/gradcheck.hpp"
#include "core/io_util.hpp"
#include "core/parallel.hpp"
#include "core/rng.hpp"

namespace scpc::pipeline {

using autodiff::AdamState;
using autodiff::Checkpoint;
using autodiff::load_checkpoint;
using autodiff::save_checkpoint;
using autodiff::Tensor;
using geometry::PointCloud;
using nlohmann::json;

namespace {

// Stream tags for stage-level seed derivation.
constexpr std::uint64_t kTagGen = 0x11ull;
constexpr std::uint64_t kTagSimInit = 0x21ull;
constexpr std::uint64_t kTagSimTrain = 0x22ull;
constexpr std::uint64_t kTagConInit = 0x31ull;
constexpr std::uint64_t kTagConTrain = 0x32ull;
constexpr std::uint64_t kTagProbe = 0x41ull;
constexpr std::uint64_t kTagSeg = 0x42ull;
constexpr std::uint64_t kTagSweep = 0x51ull;

std::filesystem::path run_dir(const RunConfig& config) {
  return std::filesystem::path(config.get("out_dir"));
}

void log_line(const RunConfig& config, const std::string& message) {
  // Timestamps are confined to this file; every other output is a pure
  // function of (config, seed).
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%S", std::gmtime(&t));
  append_text_file(run_dir(config) / "log.txt",
                   std::string(stamp) + "Z " + message + "\n");
}

void prepare_run_dir(const RunConfig& config) {
  config.validate();
  std::filesystem::create_directories(run_dir(config));
  atomic_write_file(run_dir(config) / "config.resolved",
                    "# config_hash=" + config.hash() + "\n" +
                        config.canonical_text());
}

encoders::EncoderConfig encoder_config_from(const RunConfig& config,
                                            const std::string& prefix,
                                            bool concat_layers) {
  encoders::EncoderConfig out;
  out.channel_widths = config.get_size_list(prefix + ".widths");
  out.knn_k = static_cast<std::size_t>(config.get_int(prefix + ".knn_k"));
  out.dynamic_graph = config.get_bool(prefix + ".dynamic_graph");
  out.output_dim = static_cast<std::size_t>(config.get_int(prefix + ".out_dim"));
  out.concat_layers = concat_layers;
  return out;
}

selfsim::ThresholdSchedule schedule_from(const RunConfig& config) {
  selfsim::ThresholdSchedule schedule;
  schedule.lower0 = config.get_double("anneal.lower0");
  schedule.upper0 = config.get_double("anneal.upper0");
  schedule.lower_step = config.get_double("anneal.lower_step");
  schedule.upper_step = config.get_double("anneal.upper_step");
  schedule.warmup_epochs = static_cast<int>(config.get_int("anneal.warmup_epochs"));
  schedule.interval_epochs =
      static_cast<int>(config.get_int("anneal.interval_epochs"));
  schedule.min_gap = config.get_double("anneal.min_gap");
  return schedule;
}

contrastive::TrainConfig contrastive_train_config(const RunConfig& config) {
  contrastive::TrainConfig out;
  out.temperature = config.get_double("con.temperature");
  out.normalize_features = config.get_bool("con.normalize_features");
  out.rotated_positive = config.get("con.positive") == "rotated";
  out.epochs = static_cast<int>(config.get_int("con.epochs"));
  out.batch_clouds = static_cast<std::size_t>(config.get_int("con.batch_clouds"));
  out.lr = {config.get_double("con.lr"), config.get_double("con.lr_decay"),
            static_cast<int>(config.get_int("con.lr_interval"))};
  out.schedule = schedule_from(config);
  out.mining_enabled = config.get_bool("mining.enabled");
  out.seed = mix_seed(config.get_u64("seed"), kTagConTrain);
  out.patch_count = static_cast<std::size_t>(config.get_int("patch.count"));
  out.patch_k = static_cast<std::size_t>(config.get_int("patch.k"));
  out.dilation = static_cast<int>(config.get_int("patch.dilation"));
  return out;
}

std::vector<std::size_t> capped_indices(const std::vector<std::size_t>& all,
                                        long cap) {
  if (cap <= 0 || static_cast<std::size_t>(cap) >= all.size()) return all;
  return {all.begin(), all.begin() + cap};
}

// --- training-state checkpoints -------------------------------------------

void save_training_state(const std::filesystem::path& path,
                         const autodiff::ParamStore& store,
                         const AdamState& adam, int completed_epochs,
                         const Tensor& history, const std::string& hash) {
  Checkpoint ckpt;
  ckpt.config_hash = hash;
  for (std::size_t p = 0; p < store.size(); ++p) {
    const auto& entry = store.entry(static_cast<int>(p));
    ckpt.set(entry.name, entry.value);
  }
  for (std::size_t p = 0; p < store.size(); ++p) {
    const auto& entry = store.entry(static_cast<int>(p));
    if (!entry.trainable) continue;
    ckpt.set("adam.m." + entry.name, adam.first_moments()[p]);
    ckpt.set("adam.v." + entry.name, adam.second_moments()[p]);
  }
  ckpt.set("adam.t", Tensor::scalar(static_cast<double>(adam.step_count())));
  ckpt.set("train.epoch", Tensor::scalar(completed_epochs));
  if (completed_epochs > 0) ckpt.set("train.history", history);
  save_checkpoint(ckpt, path);
}

// Restores parameters (and optionally optimizer state) from a checkpoint
// whose config hash must match the active configuration.
void restore_params(const Checkpoint& ckpt, autodiff::ParamStore& store) {
  for (std::size_t p = 0; p < store.size(); ++p) {
    auto& entry = store.entry(static_cast<int>(p));
    const Tensor& saved = ckpt.require(entry.name);
    if (!saved.same_shape(entry.value)) {
      throw IoError("checkpoint tensor '" + entry.name +
                    "' has shape " + saved.shape_string() + ", expected " +
                    entry.value.shape_string());
    }
    entry.value = saved;
  }
}

struct TrainingState {
  int completed_epochs = 0;
  Tensor history;  // empty when no epochs completed
};

TrainingState restore_training_state(const Checkpoint& ckpt,
                                     autodiff::ParamStore& store,
                                     AdamState& adam,
                                     const std::string& expected_hash,
                                     const std::string& origin) {
  if (ckpt.config_hash != expected_hash) {
    throw std::invalid_argument(
        origin + ": checkpoint was written by a different configuration (" +
        ckpt.config_hash + " vs " + expected_hash + ")");
  }
  restore_params(ckpt, store);
  for (std::size_t p = 0; p < store.size(); ++p) {
    const auto& entry = store.entry(static_cast<int>(p));
    if (!entry.trainable) continue;
    adam.first_moments()[p] = ckpt.require("adam.m." + entry.name);
    adam.second_moments()[p] = ckpt.require("adam.v." + entry.name);
  }
  adam.set_step_count(
      static_cast<std::int64_t>(ckpt.require("adam.t").scalar_value()));
  TrainingState state;
  state.completed_epochs =
      static_cast<int>(ckpt.require("train.epoch").scalar_value());
  if (state.completed_epochs > 0) state.history = ckpt.require("train.history");
  return state;
}

// --- dataset ---------------------------------------------------------------

std::string entry_file_name(const std::string& split, std::size_t index,
                            const std::string& kind) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%03zu", index);
  return split + "_" + buf + "_" + kind + ".xyz";
}

void write_manifest(const RunConfig& config,
                    const std::vector<DatasetEntry>& entries) {
  json array = json::array();
  for (const auto& entry : entries) {
    array.push_back({{"file", entry.file},
                     {"split", entry.split},
                     {"kind", entry.kind},
                     {"class_id", entry.class_id},
                     {"points", entry.points},
                     {"sigma", entry.sigma},
                     {"seed", entry.seed},
                     {"labeled", entry.labeled}});
  }
  atomic_write_file(manifest_path(config), array.dump(2) + "\n");
}

std::vector<DatasetEntry> read_manifest(const RunConfig& config) {
  const auto path = manifest_path(config);
  if (!std::filesystem::exists(path)) {
    throw std::invalid_argument(
        "dataset manifest not found; expected it at " + path.string() +
        "; run gen first");
  }
  json array;
  try {
    array = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  std::vector<DatasetEntry> entries;
  for (const auto& item : array) {
    DatasetEntry entry;
    entry.file = item.at("file").get<std::string>();
    entry.split = item.at("split").get<std::string>();
    entry.kind = item.at("kind").get<std::string>();
    entry.class_id = item.at("class_id").get<int>();
    entry.points = item.at("points").get<std::size_t>();
    entry.sigma = item.at("sigma").get<double>();
    entry.seed = item.at("seed").get<std::uint64_t>();
    entry.labeled = item.at("labeled").get<bool>();
    entries.push_back(std::move(entry));
  }
  return entries;
}

// --- metric output ----------------------------------------------------------

std::string metric_row(const std::string& run_id, const std::string& task,
                       const std::string& split, const std::string& metric,
                       const std::string& value) {
  return run_id + "," + task + "," + split + "," + metric + "," + value + "\n";
}

constexpr const char* kMetricHeader = "run_id,task,split,metric,value\n";

// --- probe internals --------------------------------------------------------

Tensor global_feature_rows(const contrastive::ContrastiveModel& model,
                           const Dataset& dataset,
                           const std::vector<std::size_t>& indices) {
  Tensor rows(indices.size(), model.encoder_config.output_dim);
  parallel_for(indices.size(), [&](std::size_t i) {
    const auto feature =
        eval::global_feature(model, dataset.clouds[indices[i]]);
    for (std::size_t c = 0; c < feature.size(); ++c) rows.at(i, c) = feature[c];
  });
  return rows;
}

std::vector<int> class_labels(const Dataset& dataset,
                              const std::vector<std::size_t>& indices) {
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (std::size_t i : indices) labels.push_back(dataset.entries[i].class_id);
  return labels;
}

eval::ProbeConfig probe_config_from(const RunConfig& config) {
  eval::ProbeConfig out;
  out.loss = config.get("probe.loss") == "hinge"
                 ? eval::ProbeLoss::multiclass_hinge
                 : eval::ProbeLoss::multinomial_logistic;
  out.epochs = static_cast<int>(config.get_int("probe.epochs"));
  out.lr = config.get_double("probe.lr");
  out.fine_tune = config.get_bool("probe.fine_tune");
  out.fine_tune_epochs =
      static_cast<int>(config.get_int("probe.fine_tune_epochs"));
  out.fine_tune_batch_clouds = static_cast<std::size_t>(
      config.get_int("probe.fine_tune_batch_clouds"));
  out.head_layers = 1;  // the classification probe stays strictly linear
  out.seed = mix_seed(config.get_u64("seed"), kTagProbe);
  return out;
}

void save_head(const eval::LinearHead& head, const std::string& hash,
               const std::filesystem::path& path) {
  Checkpoint ckpt;
  ckpt.config_hash = hash;
  for (std::size_t p = 0; p < head.params.size(); ++p) {
    const auto& entry = head.params.entry(static_cast<int>(p));
    ckpt.set(entry.name, entry.value);
  }
  save_checkpoint(ckpt, path);
}

eval::LinearHead load_head(const std::filesystem::path& path,
                           const std::string& expected_hash,
                           const std::string& prefix) {
  if (!std::filesystem::exists(path)) {
    throw std::invalid_argument(
        "probe head checkpoint not found; expected it at " + path.string() +
        "; run the probe stage first");
  }
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.config_hash != expected_hash) {
    throw std::invalid_argument(
        path.string() + ": checkpoint was written by a different configuration");
  }
  eval::LinearHead head;
  for (int layer = 0;; ++layer) {
    const std::string base = prefix + ".layer" + std::to_string(layer);
    const Tensor* weight = ckpt.find(base + ".weight");
    if (!weight) break;
    const Tensor* bias = ckpt.find(base + ".bias");
    if (!bias) throw IoError(path.string() + ": missing bias for " + base);
    const int w = head.params.add(base + ".weight", *weight);
    const int b = head.params.add(base + ".bias", *bias);
    head.layers.emplace_back(w, b);
  }
  if (head.layers.empty())
    throw IoError(path.string() + ": no head layers found");
  head.input_dim = ckpt.require(prefix + ".layer0.weight").rows();
  const auto& last = head.params.entry(head.layers.back().first).value;
  head.output_dim = last.cols();
  return head;
}

// Per-category segmentation heads, keyed by kind name.
struct SegProbe {
  std::map<std::string, eval::LinearHead> heads;
};

std::vector<int> predict_shape(const eval::LinearHead& head,
                               const Tensor& features) {
  return eval::head_predict(head, features);
}

double segmentation_miou(const contrastive::ContrastiveModel& model,
                         SegProbe& probe, const Dataset& dataset,
                         const std::vector<std::size_t>& indices,
                         const std::vector<PointCloud>* override_clouds,
                         std::vector<double>* shape_ious_out) {
  std::vector<double> shape_ious(indices.size(), 0.0);
  parallel_for(indices.size(), [&](std::size_t i) {
    const std::size_t idx = indices[i];
    const PointCloud& cloud =
        override_clouds ? (*override_clouds)[i] : dataset.clouds[idx];
    const auto& kind = dataset.entries[idx].kind;
    const auto it = probe.heads.find(kind);
    if (it == probe.heads.end())
      throw std::invalid_argument("no segmentation head for kind " + kind);
    const Tensor features = eval::pointwise_features(model, cloud);
    const auto predictions = predict_shape(it->second, features);
    shape_ious[i] = eval::shape_iou(
        predictions, cloud.labels,
        geometry::part_count(geometry::shape_kind_from_string(kind)));
  });
  double total = 0.0;
  for (double v : shape_ious) total += v;
  if (shape_ious_out) *shape_ious_out = shape_ious;
  return shape_ious.empty() ? 0.0
                            : total / static_cast<double>(shape_ious.size());
}

}  // namespace

std::filesystem::path data_dir(const RunConfig& config) {
  return run_dir(config) / "data";
}

std::filesystem::path manifest_path(const RunConfig& config) {
  return data_dir(config) / "manifest.json";
}

std::filesystem::path sim_checkpoint_path(const RunConfig& config) {
  return run_dir(config) / "sim.ckpt";
}

std::filesystem::path con_checkpoint_path(const RunConfig& config) {
  return run_dir(config) / "con.ckpt";
}

std::vector<std::size_t> Dataset::split_indices(const std::string& split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].split == split) out.push_back(i);
  }
  return out;
}

Dataset load_dataset(const RunConfig& config) {
  Dataset dataset;
  dataset.entries = read_manifest(config);
  dataset.clouds.resize(dataset.entries.size());
  parallel_for(dataset.entries.size(), [&](std::size_t i) {
    dataset.clouds[i] =
        geometry::read_xyz(data_dir(config) / dataset.entries[i].file);
  });
  return dataset;
}

void cmd_gen(const RunConfig& config) {
  prepare_run_dir(config);
  std::filesystem::create_directories(data_dir(config));
  const auto kinds = config.get_list("data.kinds");
  const std::uint64_t seed = config.get_u64("seed");
  const auto points = static_cast<std::size_t>(config.get_int("data.points"));
  const double sigma = config.get_double("data.sigma");

  std::vector<DatasetEntry> entries;
  const struct {
    const char* split;
    long count;
    std::uint64_t tag;
  } splits[] = {{"train", config.get_int("data.train_count"), 0},
                {"test", config.get_int("data.test_count"), 1}};
  for (const auto& split : splits) {
    for (long i = 0; i < split.count; ++i) {
      const std::size_t kind_index = static_cast<std::size_t>(i) % kinds.size();
      DatasetEntry entry;
      entry.kind = kinds[kind_index];
      entry.split = split.split;
      entry.class_id = static_cast<int>(kind_index);
      entry.points = points;
      entry.sigma = sigma;
      entry.seed = mix_seed(seed, kTagGen, split.tag,
                            static_cast<std::uint64_t>(i));
      entry.file = entry_file_name(entry.split, static_cast<std::size_t>(i),
                                   entry.kind);
      const auto kind = geometry::shape_kind_from_string(entry.kind);
      entry.labeled = geometry::part_count(kind) > 0;
      geometry::ShapeSpec spec{kind, points, sigma, entry.seed};
      geometry::write_xyz(geometry::generate_shape(spec),
                          data_dir(config) / entry.file);
      entries.push_back(std::move(entry));
    }
  }
  write_manifest(config, entries);
  log_line(config, "gen: wrote " + std::to_string(entries.size()) + " clouds");
}

selfsim::SimilarityModel load_similarity_model(const RunConfig& config) {
  const auto path = sim_checkpoint_path(config);
  if (!std::filesystem::exists(path)) {
    throw std::invalid_argument(
        "similarity checkpoint not found; expected it at " + path.string() +
        "; run train-sim first");
  }
  auto model = selfsim::SimilarityModel::create(
      encoder_config_from(config, "e1", /*concat_layers=*/false),
      mix_seed(config.get_u64("seed"), kTagSimInit));
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.config_hash != config.hash()) {
    throw std::invalid_argument(
        path.string() + ": checkpoint was written by a different configuration");
  }
  restore_params(ckpt, model.params);
  return model;
}

contrastive::ContrastiveModel load_contrastive_model(const RunConfig& config) {
  const auto path = con_checkpoint_path(config);
  if (!std::filesystem::exists(path)) {
    throw std::invalid_argument(
        "contrastive checkpoint not found; expected it at " + path.string() +
        "; run train-con first");
  }
  auto model = contrastive::ContrastiveModel::create(
      encoder_config_from(config, "e2", /*concat_layers=*/true),
      mix_seed(config.get_u64("seed"), kTagConInit));
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.config_hash != config.hash()) {
    throw std::invalid_argument(
        path.string() + ": checkpoint was written by a different configuration");
  }
  restore_params(ckpt, model.params);
  return model;
}

void cmd_train_sim(const RunConfig& config, int epoch_limit) {
  prepare_run_dir(config);
  const Dataset dataset = load_dataset(config);
  const auto train_indices = capped_indices(dataset.split_indices("train"),
                                            config.get_int("sim.max_clouds"));
  std::vector<PointCloud> clouds;
  for (std::size_t i : train_indices) clouds.push_back(dataset.clouds[i]);

  auto model = selfsim::SimilarityModel::create(
      encoder_config_from(config, "e1", /*concat_layers=*/false),
      mix_seed(config.get_u64("seed"), kTagSimInit));

  selfsim::TrainConfig train;
  train.epochs = static_cast<int>(config.get_int("sim.epochs"));
  train.batch_clouds =
      static_cast<std::size_t>(config.get_int("sim.batch_clouds"));
  train.pairs_per_cloud =
      static_cast<std::size_t>(config.get_int("sim.pairs_per_cloud"));
  train.lr = {config.get_double("sim.lr"), config.get_double("sim.lr_decay"),
              static_cast<int>(config.get_int("sim.lr_interval"))};
  train.seed = mix_seed(config.get_u64("seed"), kTagSimTrain);
  train.patch_count = static_cast<std::size_t>(config.get_int("patch.count"));
  train.patch_k = static_cast<std::size_t>(config.get_int("patch.k"));

  AdamState adam(model.params, train.lr.initial_lr);
  int start_epoch = 0;
  std::vector<selfsim::EpochLoss> history;
  const auto ckpt_path = sim_checkpoint_path(config);
  if (std::filesystem::exists(ckpt_path)) {
    const auto state =
        restore_training_state(load_checkpoint(ckpt_path), model.params, adam,
                               config.hash(), ckpt_path.string());
    start_epoch = state.completed_epochs;
    for (int e = 0; e < state.completed_epochs; ++e) {
      selfsim::EpochLoss row;
      row.epoch = static_cast<int>(state.history.at(e, 0));
      row.loss = state.history.at(e, 1);
      history.push_back(row);
    }
  }

  int target = train.epochs;
  if (epoch_limit > 0) target = std::min(target, start_epoch + epoch_limit);

  for (int epoch = start_epoch; epoch < target; ++epoch) {
    selfsim::TrainConfig one = train;
    one.epochs = epoch + 1;
    const auto rows = selfsim::train_similarity(clouds, model, one, adam, epoch);
    history.push_back(rows.at(0));

    Tensor table(history.size(), 2);
    std::string csv = "epoch,loss\n";
    for (std::size_t e = 0; e < history.size(); ++e) {
      table.at(e, 0) = history[e].epoch;
      table.at(e, 1) = history[e].loss;
      csv += std::to_string(history[e].epoch) + "," +
             format_double(history[e].loss) + "\n";
    }
    save_training_state(ckpt_path, model.params, adam, epoch + 1, table,
                        config.hash());
    atomic_write_file(run_dir(config) / "sim_loss.csv", csv);
  }
  log_line(config, "train-sim: epochs " + std::to_string(start_epoch) + ".." +
                       std::to_string(target) + " on " +
                       std::to_string(clouds.size()) + " clouds");
}

void cmd_train_con(const RunConfig& config, int epoch_limit) {
  prepare_run_dir(config);
  const Dataset dataset = load_dataset(config);
  const auto similarity_model = load_similarity_model(config);
  const auto train_indices = capped_indices(dataset.split_indices("train"),
                                            config.get_int("con.max_clouds"));
  std::vector<PointCloud> clouds;
  for (std::size_t i : train_indices) clouds.push_back(dataset.clouds[i]);

  auto model = contrastive::ContrastiveModel::create(
      encoder_config_from(config, "e2", /*concat_layers=*/true),
      mix_seed(config.get_u64("seed"), kTagConInit));
  const auto train = contrastive_train_config(config);

  AdamState adam(model.params, train.lr.initial_lr);
  int start_epoch = 0;
  std::vector<contrastive::EpochStats> history;
  const auto ckpt_path = con_checkpoint_path(config);
  if (std::filesystem::exists(ckpt_path)) {
    const auto state =
        restore_training_state(load_checkpoint(ckpt_path), model.params, adam,
                               config.hash(), ckpt_path.string());
    start_epoch = state.completed_epochs;
    for (int e = 0; e < state.completed_epochs; ++e) {
      contrastive::EpochStats stats;
      stats.epoch = static_cast<int>(state.history.at(e, 0));
      stats.loss = state.history.at(e, 1);
      stats.lower_threshold = state.history.at(e, 2);
      stats.upper_threshold = state.history.at(e, 3);
      stats.mean_negatives = state.history.at(e, 4);
      stats.skipped_anchors =
          static_cast<std::size_t>(state.history.at(e, 5));
      history.push_back(stats);
    }
  }

  int target = train.epochs;
  if (epoch_limit > 0) target = std::min(target, start_epoch + epoch_limit);

  for (int epoch = start_epoch; epoch < target; ++epoch) {
    contrastive::TrainConfig one = train;
    one.epochs = epoch + 1;
    const auto rows = contrastive::train_contrastive(clouds, similarity_model,
                                                     model, one, adam, epoch);
    history.push_back(rows.at(0));

    Tensor table(history.size(), 6);
    std::string csv = "epoch,loss,b_l,b_u,mean_negatives,skipped_anchors\n";
    for (std::size_t e = 0; e < history.size(); ++e) {
      const auto& stats = history[e];
      table.at(e, 0) = stats.epoch;
      table.at(e, 1) = stats.loss;
      table.at(e, 2) = stats.lower_threshold;
      table.at(e, 3) = stats.upper_threshold;
      table.at(e, 4) = stats.mean_negatives;
      table.at(e, 5) = static_cast<double>(stats.skipped_anchors);
      csv += std::to_string(stats.epoch) + "," + format_double(stats.loss) +
             "," + format_double(stats.lower_threshold) + "," +
             format_double(stats.upper_threshold) + "," +
             format_double(stats.mean_negatives) + "," +
             std::to_string(stats.skipped_anchors) + "\n";
    }
    save_training_state(ckpt_path, model.params, adam, epoch + 1, table,
                        config.hash());
    atomic_write_file(run_dir(config) / "con_loss.csv", csv);
  }
  log_line(config, "train-con: epochs " + std::to_string(start_epoch) + ".." +
                       std::to_string(target) + " on " +
                       std::to_string(clouds.size()) + " clouds");
}

void cmd_mine(const RunConfig& config) {
  prepare_run_dir(config);
  const Dataset dataset = load_dataset(config);
  const auto model = load_similarity_model(config);
  const auto train_indices = capped_indices(dataset.split_indices("train"),
                                            config.get_int("con.max_clouds"));

  long epoch = config.get_int("mine.epoch");
  if (epoch < 0) epoch = std::max(config.get_int("con.epochs") - 1, 0L);
  double lower = 0.0, upper = 1.0;
  if (config.get_bool("mining.enabled")) {
    const auto thresholds =
        selfsim::thresholds_at(schedule_from(config), static_cast<int>(epoch));
    lower = thresholds.first;
    upper = thresholds.second;
  }

  const auto patch_count =
      static_cast<std::size_t>(config.get_int("patch.count"));
  const auto patch_k = static_cast<std::size_t>(config.get_int("patch.k"));

  std::string csv = "anchor,candidate,similarity,is_hard_negative\n";
  for (std::size_t c = 0; c < train_indices.size(); ++c) {
    const PointCloud& cloud = dataset.clouds[train_indices[c]];
    const auto patches = selfsim::sample_patches(cloud, patch_count, patch_k);
    const auto table = selfsim::similarity_matrix(model, cloud, patches);
    for (std::size_t anchor = 0; anchor < patches.size(); ++anchor) {
      const auto mined = selfsim::mine_from_matrix(table, anchor, lower, upper);
      for (std::size_t j : mined) {
        csv += std::to_string(c * patch_count + anchor) + "," +
               std::to_string(c * patch_count + j) + "," +
               format_double(table[anchor][j]) + ",1\n";
      }
    }
  }
  atomic_write_file(run_dir(config) / "mine.csv", csv);
  log_line(config, "mine: thresholds [" + format_double(lower, 6) + ", " +
                       format_double(upper, 6) + "] at epoch " +
                       std::to_string(epoch));
}

namespace {

// Shared by cmd_probe and cmd_ablate; returns the test metric.
double run_classification_probe(const RunConfig& config) {
  const Dataset dataset = load_dataset(config);
  auto model = load_contrastive_model(config);
  const auto train_indices = dataset.split_indices("train");
  const auto test_indices = dataset.split_indices("test");
  const auto probe_config = probe_config_from(config);

  eval::ProbeResult result;
  if (probe_config.fine_tune) {
    std::vector<PointCloud> train_clouds, test_clouds;
    for (std::size_t i : train_indices) train_clouds.push_back(dataset.clouds[i]);
    for (std::size_t i : test_indices) test_clouds.push_back(dataset.clouds[i]);
    result = eval::train_probe_fine_tune(
        model, train_clouds, class_labels(dataset, train_indices), test_clouds,
        class_labels(dataset, test_indices), probe_config);
  } else {
    const Tensor train_x = global_feature_rows(model, dataset, train_indices);
    const Tensor test_x = global_feature_rows(model, dataset, test_indices);
    result = eval::train_probe(train_x, class_labels(dataset, train_indices),
                               test_x, class_labels(dataset, test_indices),
                               probe_config);
  }

  const std::string hash = config.hash();
  std::string csv = kMetricHeader;
  csv += metric_row(hash, "classification", "train", "accuracy",
                    format_double(result.train_accuracy));
  csv += metric_row(hash, "classification", "test", "accuracy",
                    format_double(result.test_accuracy));
  atomic_write_file(run_dir(config) / "probe_metrics.csv", csv);

  std::ostringstream report;
  report << "classification probe (config " << hash << ")\n"
         << "  train clouds: " << train_indices.size() << "\n"
         << "  test clouds:  " << test_indices.size() << "\n"
         << "  train accuracy: " << format_double(result.train_accuracy, 6)
         << "\n"
         << "  test accuracy:  " << format_double(result.test_accuracy, 6)
         << "\n";
  atomic_write_file(run_dir(config) / "probe_report.txt", report.str());
  save_head(result.head, hash, run_dir(config) / "probe.ckpt");
  return result.test_accuracy;
}

double run_segmentation_probe(const RunConfig& config) {
  const Dataset dataset = load_dataset(config);
  const auto model = load_contrastive_model(config);
  const std::string hash = config.hash();

  std::vector<std::size_t> train_indices, test_indices;
  for (const auto split : {"train", "test"}) {
    for (std::size_t i : dataset.split_indices(split)) {
      if (!dataset.entries[i].labeled) continue;
      (split == std::string("train") ? train_indices : test_indices).push_back(i);
    }
  }
  if (train_indices.empty() || test_indices.empty()) {
    throw std::invalid_argument(
        "segmentation probe needs labeled kinds (cylinder, cross) in both "
        "splits; check data.kinds");
  }

  std::set<std::string> kinds;
  for (std::size_t i : train_indices) kinds.insert(dataset.entries[i].kind);

  const double fraction = config.get_double("seg.label_fraction");
  SegProbe probe;
  for (const auto& kind : kinds) {
    std::vector<std::size_t> kind_train;
    for (std::size_t i : train_indices) {
      if (dataset.entries[i].kind == kind) kind_train.push_back(i);
    }
    const std::size_t keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::floor(fraction * static_cast<double>(kind_train.size()))));
    kind_train.resize(std::min(keep, kind_train.size()));

    std::size_t total_points = 0;
    std::vector<Tensor> features(kind_train.size());
    parallel_for(kind_train.size(), [&](std::size_t i) {
      features[i] =
          eval::pointwise_features(model, dataset.clouds[kind_train[i]]);
    });
    for (const auto& f : features) total_points += f.rows();

    const std::size_t dim = model.encoder_config.output_dim;
    Tensor stacked(total_points, dim);
    std::vector<std::size_t> labels;
    labels.reserve(total_points);
    std::size_t row = 0;
    for (std::size_t i = 0; i < kind_train.size(); ++i) {
      const auto& cloud = dataset.clouds[kind_train[i]];
      for (std::size_t r = 0; r < features[i].rows(); ++r, ++row) {
        for (std::size_t c = 0; c < dim; ++c)
          stacked.at(row, c) = features[i].at(r, c);
        labels.push_back(static_cast<std::size_t>(cloud.labels[r]));
      }
    }

    const int parts =
        geometry::part_count(geometry::shape_kind_from_string(kind));
    eval::ProbeConfig head_config;
    head_config.epochs = static_cast<int>(config.get_int("seg.epochs"));
    head_config.lr = config.get_double("seg.lr");
    head_config.head_layers = static_cast<int>(config.get_int("seg.head_layers"));
    head_config.hidden_width =
        static_cast<std::size_t>(config.get_int("seg.hidden_width"));
    head_config.seed = mix_seed(config.get_u64("seed"), kTagSeg,
                                fnv1a64(kind));
    auto head =
        eval::make_head(dim, static_cast<std::size_t>(parts),
                        head_config.head_layers, head_config.hidden_width,
                        head_config.seed);
    eval::train_head(head, stacked, labels, head_config);
    // Head parameter names need a per-kind prefix in the shared checkpoint.
    probe.heads.emplace(kind, std::move(head));
  }

  std::vector<double> test_shape_ious, train_shape_ious;
  const double test_miou = segmentation_miou(model, probe, dataset,
                                             test_indices, nullptr,
                                             &test_shape_ious);
  const double train_miou = segmentation_miou(model, probe, dataset,
                                              train_indices, nullptr,
                                              &train_shape_ious);

  std::string csv = kMetricHeader;
  csv += metric_row(hash, "segmentation", "train", "miou",
                    format_double(train_miou));
  csv += metric_row(hash, "segmentation", "test", "miou",
                    format_double(test_miou));
  atomic_write_file(run_dir(config) / "seg_metrics.csv", csv);

  std::ostringstream report;
  report << "segmentation probe (config " << hash << ")\n"
         << "  labeled train shapes: " << train_indices.size() << "\n"
         << "  labeled test shapes:  " << test_indices.size() << "\n"
         << "  train mIoU: " << format_double(train_miou, 6) << "\n"
         << "  test mIoU:  " << format_double(test_miou, 6) << "\n";
  for (const auto& kind : kinds) {
    double kind_total = 0.0;
    std::size_t kind_count = 0;
    for (std::size_t i = 0; i < test_indices.size(); ++i) {
      if (dataset.entries[test_indices[i]].kind == kind) {
        kind_total += test_shape_ious[i];
        ++kind_count;
      }
    }
    if (kind_count > 0) {
      report << "  " << kind << " test mIoU: "
             << format_double(kind_total / kind_count, 6) << " over "
             << kind_count << " shapes\n";
    }
  }
  atomic_write_file(run_dir(config) / "seg_report.txt", report.str());

  Checkpoint heads_ckpt;
  heads_ckpt.config_hash = hash;
  for (const auto& [kind, head] : probe.heads) {
    for (std::size_t p = 0; p < head.params.size(); ++p) {
      const auto& entry = head.params.entry(static_cast<int>(p));
      heads_ckpt.set("seg." + kind + "." + entry.name, entry.value);
    }
  }
  save_checkpoint(heads_ckpt, run_dir(config) / "seg_probe.ckpt");
  return test_miou;
}

SegProbe load_seg_probe(const RunConfig& config,
                        const std::set<std::string>& kinds) {
  const auto path = run_dir(config) / "seg_probe.ckpt";
  if (!std::filesystem::exists(path)) {
    throw std::invalid_argument(
        "segmentation head checkpoint not found; expected it at " +
        path.string() + "; run seg-probe first");
  }
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.config_hash != config.hash()) {
    throw std::invalid_argument(
        path.string() + ": checkpoint was written by a different configuration");
  }
  SegProbe probe;
  for (const auto& kind : kinds) {
    eval::LinearHead head;
    for (int layer = 0;; ++layer) {
      const std::string base =
          "seg." + kind + ".head.layer" + std::to_string(layer);
      const Tensor* weight = ckpt.find(base + ".weight");
      if (!weight) break;
      const int w = head.params.add("head.layer" + std::to_string(layer) +
                                        ".weight",
                                    *weight);
      const int b = head.params.add(
          "head.layer" + std::to_string(layer) + ".bias",
          ckpt.require(base + ".bias"));
      head.layers.emplace_back(w, b);
    }
    if (head.layers.empty())
      throw IoError(path.string() + ": no head for kind " + kind);
    probe.heads.emplace(kind, std::move(head));
  }
  return probe;
}

}  // namespace

void cmd_probe(const RunConfig& config) {
  prepare_run_dir(config);
  const double test_accuracy = run_classification_probe(config);
  log_line(config, "probe: test accuracy " + format_double(test_accuracy, 6));
}

void cmd_seg_probe(const RunConfig& config) {
  prepare_run_dir(config);
  const double test_miou = run_segmentation_probe(config);
  log_line(config, "seg-probe: test mIoU " + format_double(test_miou, 6));
}

void cmd_sweep(const RunConfig& config) {
  prepare_run_dir(config);
  const Dataset dataset = load_dataset(config);
  const auto model = load_contrastive_model(config);
  const auto kind = config.get("sweep.kind");
  const auto task = config.get("sweep.task");
  const auto levels = config.get_double_list("sweep.levels");
  const std::uint64_t seed = config.get_u64("seed");

  std::vector<std::size_t> test_indices;
  if (task == "classification") {
    test_indices = dataset.split_indices("test");
  } else {
    for (std::size_t i : dataset.split_indices("test")) {
      if (dataset.entries[i].labeled) test_indices.push_back(i);
    }
    if (test_indices.empty())
      throw std::invalid_argument("sweep: no labeled test shapes");
  }

  eval::LinearHead cls_head;
  SegProbe seg_probe;
  if (task == "classification") {
    cls_head = load_head(run_dir(config) / "probe.ckpt", config.hash(), "head");
  } else {
    std::set<std::string> kinds;
    for (std::size_t i : test_indices) kinds.insert(dataset.entries[i].kind);
    seg_probe = load_seg_probe(config, kinds);
  }

  std::string csv = "level,metric\n";
  for (std::size_t li = 0; li < levels.size(); ++li) {
    const double level = levels[li];
    std::vector<PointCloud> perturbed(test_indices.size());
    for (std::size_t i = 0; i < test_indices.size(); ++i) {
      const PointCloud& cloud = dataset.clouds[test_indices[i]];
      if (kind == "noise") {
        perturbed[i] =
            eval::with_noise(cloud, level, mix_seed(seed, kTagSweep, li, i));
      } else {
        const auto keep = static_cast<std::size_t>(
            std::lround(level * static_cast<double>(cloud.size())));
        perturbed[i] = eval::with_density(cloud, std::max<std::size_t>(1, keep),
                                          mix_seed(seed, kTagSweep, li, i));
      }
    }

    double metric;
    if (task == "classification") {
      Tensor rows(test_indices.size(), model.encoder_config.output_dim);
      parallel_for(test_indices.size(), [&](std::size_t i) {
        const auto feature = eval::global_feature(model, perturbed[i]);
        for (std::size_t c = 0; c < feature.size(); ++c)
          rows.at(i, c) = feature[c];
      });
      metric = eval::accuracy(eval::head_predict(cls_head, rows),
                              class_labels(dataset, test_indices));
    } else {
      metric = segmentation_miou(model, seg_probe, dataset, test_indices,
                                 &perturbed, nullptr);
    }
    csv += format_double(level) + "," + format_double(metric) + "\n";
  }
  atomic_write_file(run_dir(config) / "sweep.csv", csv);
  log_line(config, "sweep: " + kind + " over " +
                       std::to_string(levels.size()) + " levels");
}

void cmd_ablate(const RunConfig& config) {
  prepare_run_dir(config);
  const auto task = config.get("ablate.task");
  const auto base_dir = run_dir(config);

  auto make_variant = [&](bool mining, const std::string& sub) {
    RunConfig variant = config;
    variant.set("mining.enabled", mining ? "true" : "false");
    variant.set("out_dir", (base_dir / sub).string());
    return variant;
  };
  const RunConfig with_hn = make_variant(true, "ablate_with_hn");
  const RunConfig without_hn = make_variant(false, "ablate_without_hn");

  // The paired configs must differ only in the mining flag (plus out_dir,
  // which is excluded from the identity hash).
  {
    std::istringstream a(with_hn.canonical_text(false));
    std::istringstream b(without_hn.canonical_text(false));
    std::string line_a, line_b;
    int differing = 0;
    std::string which;
    while (std::getline(a, line_a) && std::getline(b, line_b)) {
      if (line_a != line_b) {
        ++differing;
        which = line_a;
      }
    }
    if (differing != 1 || which.rfind("mining.enabled", 0) != 0) {
      throw std::runtime_error(
          "ablate: paired configs diverge beyond mining.enabled");
    }
  }

  auto run_variant = [&](const RunConfig& variant) {
    cmd_gen(variant);
    cmd_train_sim(variant);
    cmd_train_con(variant);
    return task == "classification" ? run_classification_probe(variant)
                                    : run_segmentation_probe(variant);
  };
  const double metric_with = run_variant(with_hn);
  const double metric_without = run_variant(without_hn);

  const std::string metric_name =
      task == "classification" ? "accuracy" : "miou";
  std::string csv = kMetricHeader;
  csv += metric_row(with_hn.hash(), task, "test", metric_name,
                    format_double(metric_with));
  csv += metric_row(without_hn.hash(), task, "test", metric_name,
                    format_double(metric_without));
  char delta[32];
  std::snprintf(delta, sizeof(delta), "%.4f", metric_with - metric_without);
  csv += metric_row("delta", task, "test", metric_name, delta);
  atomic_write_file(base_dir / "ablate.csv", csv);

  std::ostringstream report;
  report << "hard-negative mining ablation (" << task << ")\n"
         << "  with mining    (" << with_hn.hash()
         << "): " << format_double(metric_with, 6) << "\n"
         << "  without mining (" << without_hn.hash()
         << "): " << format_double(metric_without, 6) << "\n"
         << "  delta: " << delta << "\n";
  atomic_write_file(base_dir / "ablate_report.txt", report.str());
  log_line(config, std::string("ablate: delta ") + delta);
}

void cmd_pipeline(const RunConfig& config) {
  config.validate();
  for (const auto& stage : config.get_list("pipeline.stages"))
    run_stage(config, stage);
}

std::string cmd_gradcheck(bool& all_passed) {
  const auto results = autodiff::gradcheck::run_all();
  all_passed = autodiff::gradcheck::all_passed(results);
  return autodiff::gradcheck::render_report(results);
}

void run_stage(const RunConfig& config, const std::string& stage) {
  if (stage == "gen") return cmd_gen(config);
  if (stage == "train-sim") return cmd_train_sim(config);
  if (stage == "train-con") return cmd_train_con(config);
  if (stage == "mine") return cmd_mine(config);
  if (stage == "probe") return cmd_probe(config);
  if (stage == "seg-probe") return cmd_seg_probe(config);
  if (stage == "sweep") return cmd_sweep(config);
  if (stage == "ablate") return cmd_ablate(config);
  if (stage == "pipeline") return cmd_pipeline(config);
  throw std::invalid_argument("unknown stage '" + stage + "'");
}

}  // namespace scpc::pipeline
