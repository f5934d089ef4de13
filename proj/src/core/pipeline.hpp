#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "core/config.hpp"
#include "core/contrastive.hpp"
#include "core/eval.hpp"
#include "core/selfsim.hpp"

namespace scpc::pipeline {

// One generated cloud, as listed in the dataset manifest.
struct DatasetEntry {
  std::string file;  // relative to the data directory
  std::string split;
  std::string kind;
  int class_id = 0;
  std::size_t points = 0;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  bool labeled = false;
};

struct Dataset {
  std::vector<DatasetEntry> entries;
  std::vector<geometry::PointCloud> clouds;  // aligned with entries

  std::vector<std::size_t> split_indices(const std::string& split) const;
};

// Paths inside a run directory.
std::filesystem::path data_dir(const RunConfig& config);
std::filesystem::path manifest_path(const RunConfig& config);
std::filesystem::path sim_checkpoint_path(const RunConfig& config);
std::filesystem::path con_checkpoint_path(const RunConfig& config);

Dataset load_dataset(const RunConfig& config);

// Stage runners. Each validates the config, writes the resolved config into
// the run directory, produces its outputs atomically, and appends one line
// to log.txt (the only timestamped file).
void cmd_gen(const RunConfig& config);
// epoch_limit > 0 trains at most that many epochs this invocation (the
// checkpoint keeps the run resumable); <= 0 trains to the configured count.
void cmd_train_sim(const RunConfig& config, int epoch_limit = -1);
void cmd_train_con(const RunConfig& config, int epoch_limit = -1);
void cmd_mine(const RunConfig& config);
void cmd_probe(const RunConfig& config);
void cmd_seg_probe(const RunConfig& config);
void cmd_sweep(const RunConfig& config);
void cmd_ablate(const RunConfig& config);
void cmd_pipeline(const RunConfig& config);

// Runs the finite-difference suite; returns the report text.
std::string cmd_gradcheck(bool& all_passed);

// Dispatch by stage name ("gen", "train-sim", "mine", "train-con", "probe",
// "seg-probe", "sweep", "ablate", "pipeline").
void run_stage(const RunConfig& config, const std::string& stage);

// Model reconstruction from config + checkpoint (shared with tests).
selfsim::SimilarityModel load_similarity_model(const RunConfig& config);
contrastive::ContrastiveModel load_contrastive_model(const RunConfig& config);

}  // namespace scpc::pipeline
