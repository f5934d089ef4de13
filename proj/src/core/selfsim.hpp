#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "core/encoders.hpp"
#include "core/geometry.hpp"
#include "core/optim.hpp"

namespace scpc::selfsim {

using geometry::Patch;
using geometry::PointCloud;
using geometry::Vec3;

// Encoder + aggregator + pair discriminator trained to score patch pairs.
struct SimilarityModel {
  encoders::EncoderConfig encoder_config;
  autodiff::ParamStore params;
  encoders::EncoderHandles encoder;
  encoders::AggregatorHandles aggregator;
  encoders::DiscriminatorHandles discriminator;

  static SimilarityModel create(const encoders::EncoderConfig& config,
                                std::uint64_t seed);
};

struct SimilarPair {
  std::size_t anchor_index;
  std::vector<Vec3> rotated_coords;  // anchor members, rotated about centroid
};

struct DissimilarPair {
  std::size_t anchor_index;
  std::size_t partner_index;
};

struct PairBatch {
  std::vector<SimilarPair> similar;
  std::vector<DissimilarPair> dissimilar;
};

// similar_count anchors (cycling through patches in index order) rotated
// about their centroids; dissimilar_count pairs with partners drawn
// uniformly among the other patches. Deterministic in the seed.
PairBatch sample_pairs(const PointCloud& cloud,
                       const std::vector<Patch>& patches,
                       std::size_t similar_count, std::size_t dissimilar_count,
                       std::uint64_t seed);

// Mean binary cross-entropy over the scored pairs; log arguments are
// clamped below at 1e-12.
double similarity_loss(std::span<const double> similar_scores,
                       std::span<const double> dissimilar_scores);

// [lower, upper] similarity interval, annealed stepwise after a warmup:
// both thresholds move linearly until the interval would shrink below
// min_gap, then freeze together, so upper is non-increasing, lower is
// non-decreasing and upper - lower >= min_gap at every epoch.
struct ThresholdSchedule {
  double lower0 = 0.0;
  double upper0 = 1.0;
  double lower_step = 0.05;
  double upper_step = 0.025;
  int warmup_epochs = 30;
  int interval_epochs = 5;
  double min_gap = 0.05;

  void validate() const;
};

std::pair<double, double> thresholds_at(const ThresholdSchedule& schedule,
                                        int epoch);

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_clouds = 4;      // clouds per optimizer step
  std::size_t pairs_per_cloud = 0;   // 0 = one similar + one dissimilar per patch
  autodiff::LrSchedule lr;
  std::uint64_t seed = 1;
  std::size_t patch_count = 16;
  std::size_t patch_k = 8;
};

struct EpochLoss {
  int epoch;
  double loss;
};

// One forward/backward pass over a cloud's pair batch. The store is not
// touched; the caller applies gradients and batch-norm updates.
struct StepResult {
  double loss = 0.0;
  std::vector<autodiff::Tensor> gradients;
  std::vector<autodiff::BatchNormUpdate> bn_updates;
};

StepResult similarity_step(const SimilarityModel& model,
                           const PointCloud& cloud,
                           const std::vector<Patch>& patches,
                           const PairBatch& pairs);

// Patch centers come from farthest point sampling (seed 0 start). Training
// resumes from start_epoch; per-epoch sampling streams are derived from
// (seed, epoch), so an interrupted and resumed run retraces the original.
std::vector<EpochLoss> train_similarity(const std::vector<PointCloud>& clouds,
                                        SimilarityModel& model,
                                        const TrainConfig& config,
                                        autodiff::AdamState& optimizer,
                                        int start_epoch = 0);

// Same loop over caller-supplied patch lists (one list per cloud).
std::vector<EpochLoss> train_similarity(
    const std::vector<PointCloud>& clouds,
    const std::vector<std::vector<Patch>>& patches, SimilarityModel& model,
    const TrainConfig& config, autodiff::AdamState& optimizer,
    int start_epoch = 0);

std::vector<Patch> sample_patches(const PointCloud& cloud, std::size_t count,
                                  std::size_t k);

double cosine_similarity_abs(std::span<const double> a,
                             std::span<const double> b);

// |cos| similarity of the aggregated eval-mode features of two patches.
double patch_similarity(const SimilarityModel& model, const PointCloud& cloud,
                        const Patch& a, const Patch& b);

// Aggregated eval-mode feature of every patch (rows of the result).
std::vector<std::vector<double>> aggregated_features(
    const SimilarityModel& model, const PointCloud& cloud,
    const std::vector<Patch>& patches);

// Full pairwise |cos| table; entries are filled independently per pair, so
// the computation parallelizes without affecting the result.
std::vector<std::vector<double>> similarity_matrix(
    const SimilarityModel& model, const PointCloud& cloud,
    const std::vector<Patch>& patches);

std::vector<std::size_t> mine_from_matrix(
    const std::vector<std::vector<double>>& similarity, std::size_t anchor,
    double lower, double upper);

// { j != anchor : lower <= s(anchor, j) <= upper }, ascending.
std::vector<std::size_t> mine_hard_negatives(const SimilarityModel& model,
                                             const PointCloud& cloud,
                                             const std::vector<Patch>& patches,
                                             std::size_t anchor, double lower,
                                             double upper);

}  // namespace scpc::selfsim
