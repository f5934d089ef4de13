#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "core/encoders.hpp"
#include "core/optim.hpp"
#include "core/selfsim.hpp"

namespace scpc::contrastive {

using geometry::Patch;
using geometry::PointCloud;

// Representation encoder + patch aggregator trained with the contrastive
// objective; its frozen point-wise features feed the evaluation probes.
struct ContrastiveModel {
  encoders::EncoderConfig encoder_config;
  autodiff::ParamStore params;
  encoders::EncoderHandles encoder;
  encoders::AggregatorHandles aggregator;

  static ContrastiveModel create(const encoders::EncoderConfig& config,
                                 std::uint64_t seed);
};

// One anchor with its dilated positive and mined negative patch indices.
struct ContrastExample {
  Patch anchor;
  Patch positive;
  std::vector<std::size_t> negative_indices;
};

// -log( f(pos) / (f(pos) + sum f(neg)) ) with f = exp(dot / temperature),
// evaluated in log space. Plain-double reference path; training goes
// through the tape.
double info_nce_loss(std::span<const double> anchor,
                     std::span<const double> positive,
                     const std::vector<std::vector<double>>& negatives,
                     double temperature, bool normalize = false);

struct BuildExamplesResult {
  std::vector<ContrastExample> examples;
  std::size_t skipped_anchors = 0;  // anchors whose mined negative set was empty
};

// One example per anchor patch: positive = the dilated patch at the same
// center, negatives mined from the similarity table at the epoch's
// thresholds (or the full complement when mining is disabled).
BuildExamplesResult build_examples(
    const PointCloud& cloud, const std::vector<Patch>& patches,
    const std::vector<std::vector<double>>& similarity,
    const selfsim::ThresholdSchedule& schedule, int epoch, int dilation,
    std::size_t patch_k, bool mining_enabled);

struct TrainConfig {
  double temperature = 0.1;
  bool normalize_features = false;
  // Positive sample choice: the dilated patch (default) or the rotated
  // anchor as in similarity training.
  bool rotated_positive = false;
  int epochs = 40;
  std::size_t batch_clouds = 4;
  autodiff::LrSchedule lr;
  selfsim::ThresholdSchedule schedule;
  bool mining_enabled = true;
  std::uint64_t seed = 1;
  std::size_t patch_count = 16;
  std::size_t patch_k = 8;
  int dilation = 2;

  void validate() const;
};

struct EpochStats {
  int epoch;
  double loss;
  double lower_threshold;
  double upper_threshold;
  double mean_negatives;
  std::size_t skipped_anchors;
};

// One forward/backward pass over a cloud's examples; loss_sum is the sum of
// per-anchor losses (callers normalize across the batch).
struct StepResult {
  double loss_sum = 0.0;
  std::size_t example_count = 0;
  std::vector<autodiff::Tensor> gradients;
  std::vector<autodiff::BatchNormUpdate> bn_updates;
};

StepResult contrastive_step(const ContrastiveModel& model,
                            const PointCloud& cloud,
                            const std::vector<Patch>& patches,
                            const std::vector<ContrastExample>& examples,
                            const TrainConfig& config,
                            std::uint64_t rotation_seed);

// Trains against a frozen similarity model (eval-mode scoring, never
// updated). Deterministic in (config, seed); resumable via start_epoch.
std::vector<EpochStats> train_contrastive(
    const std::vector<PointCloud>& clouds,
    const selfsim::SimilarityModel& similarity_model, ContrastiveModel& model,
    const TrainConfig& config, autodiff::AdamState& optimizer,
    int start_epoch = 0);

}  // namespace scpc::contrastive
