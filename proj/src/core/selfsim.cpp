#include "core/selfsim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "core/parallel.hpp"
#include "core/rng.hpp"

namespace scpc::selfsim {

using autodiff::AdamState;
using autodiff::Graph;
using autodiff::Tensor;
using encoders::aggregate;
using encoders::coordinates_tensor;
using encoders::discriminate;
using encoders::encode;
using encoders::gcn_adjacency;

namespace {

constexpr double kScoreFloor = 1e-12;

// Stream tags for per-epoch seed derivation.
constexpr std::uint64_t kTagInit = 0x51ull;
constexpr std::uint64_t kTagPairs = 0x52ull;

Graph::Id pair_log_term(Graph& g, Graph::Id score, bool similar) {
  Graph::Id arg = similar ? score : g.add_const(g.scale(score, -1.0), 1.0);
  return g.log_elem(
      g.clamp(arg, kScoreFloor, std::numeric_limits<double>::infinity()));
}

}  // namespace

SimilarityModel SimilarityModel::create(const encoders::EncoderConfig& config,
                                        std::uint64_t seed) {
  config.validate();
  SimilarityModel model;
  model.encoder_config = config;
  Rng rng(mix_seed(seed, kTagInit));
  model.encoder = encoders::make_encoder(model.params, config, "e1", rng);
  model.aggregator =
      encoders::make_aggregator(model.params, config.output_dim, "g1", rng);
  model.discriminator =
      encoders::make_discriminator(model.params, config.output_dim, "disc", rng);
  return model;
}

std::vector<Patch> sample_patches(const PointCloud& cloud, std::size_t count,
                                  std::size_t k) {
  const auto centers = geometry::farthest_point_sample(cloud, count, 0);
  std::vector<Patch> patches;
  patches.reserve(centers.size());
  for (std::size_t c : centers)
    patches.push_back(geometry::build_patch(cloud, c, k));
  return patches;
}

PairBatch sample_pairs(const PointCloud& cloud,
                       const std::vector<Patch>& patches,
                       std::size_t similar_count, std::size_t dissimilar_count,
                       std::uint64_t seed) {
  if (patches.size() < 2)
    throw std::invalid_argument("sample_pairs: need at least 2 patches");
  if (similar_count < 1 || dissimilar_count < 1)
    throw std::invalid_argument("sample_pairs: counts must be >= 1");
  Rng rng(seed);
  PairBatch batch;
  batch.similar.reserve(similar_count);
  for (std::size_t s = 0; s < similar_count; ++s) {
    const std::size_t anchor = s % patches.size();
    const auto coords = geometry::patch_coordinates(cloud, patches[anchor]);
    const auto rotation =
        geometry::random_rotation(rng.next_u64(), geometry::centroid(coords));
    batch.similar.push_back(
        {anchor, geometry::apply_rotation(cloud, patches[anchor], rotation)});
  }
  batch.dissimilar.reserve(dissimilar_count);
  for (std::size_t s = 0; s < dissimilar_count; ++s) {
    const std::size_t anchor = s % patches.size();
    std::size_t partner = rng.uniform_index(patches.size() - 1);
    if (partner >= anchor) ++partner;
    batch.dissimilar.push_back({anchor, partner});
  }
  return batch;
}

double similarity_loss(std::span<const double> similar_scores,
                       std::span<const double> dissimilar_scores) {
  if (similar_scores.empty() || dissimilar_scores.empty())
    throw std::invalid_argument("similarity_loss: both pair sets must be non-empty");
  double total = 0.0;
  for (double s : similar_scores) {
    if (s < 0.0 || s > 1.0)
      throw std::invalid_argument("similarity_loss: score outside [0,1]");
    total += std::log(std::max(s, kScoreFloor));
  }
  for (double s : dissimilar_scores) {
    if (s < 0.0 || s > 1.0)
      throw std::invalid_argument("similarity_loss: score outside [0,1]");
    total += std::log(std::max(1.0 - s, kScoreFloor));
  }
  const double count =
      static_cast<double>(similar_scores.size() + dissimilar_scores.size());
  return -total / count;
}

void ThresholdSchedule::validate() const {
  if (!(0.0 <= lower0 && lower0 <= upper0 && upper0 <= 1.0))
    throw std::invalid_argument("threshold schedule: need 0 <= lower0 <= upper0 <= 1");
  if (lower_step < 0.0 || upper_step < 0.0)
    throw std::invalid_argument("threshold schedule: steps must be >= 0");
  if (warmup_epochs < 1 || interval_epochs < 1)
    throw std::invalid_argument("threshold schedule: warmup and interval must be >= 1");
  if (min_gap <= 0.0)
    throw std::invalid_argument("threshold schedule: min_gap must be > 0");
  if (upper0 - lower0 < min_gap)
    throw std::invalid_argument("threshold schedule: initial gap below min_gap");
}

std::pair<double, double> thresholds_at(const ThresholdSchedule& schedule,
                                        int epoch) {
  schedule.validate();
  if (epoch < 0) throw std::invalid_argument("thresholds_at: epoch must be >= 0");
  long steps = 0;
  if (epoch >= schedule.warmup_epochs)
    steps = (epoch - schedule.warmup_epochs) / schedule.interval_epochs;
  // Both thresholds freeze together once another step would close the gap
  // below min_gap; this keeps lower non-decreasing and upper non-increasing.
  const double rate = schedule.lower_step + schedule.upper_step;
  if (rate > 0.0) {
    const double room = schedule.upper0 - schedule.lower0 - schedule.min_gap;
    const long max_steps = static_cast<long>(std::floor(room / rate + 1e-9));
    steps = std::min(steps, std::max(0L, max_steps));
  }
  const double s = static_cast<double>(steps);
  double lower = schedule.lower0 + s * schedule.lower_step;
  double upper = schedule.upper0 - s * schedule.upper_step;
  lower = std::min(std::max(lower, 0.0), 1.0);
  upper = std::min(std::max(upper, 0.0), 1.0);
  return {lower, upper};
}

StepResult similarity_step(const SimilarityModel& model,
                           const PointCloud& cloud,
                           const std::vector<Patch>& patches,
                           const PairBatch& pairs) {
  Graph g(model.params, Graph::Mode::training);
  const Graph::Id features =
      encode(g, coordinates_tensor(cloud.points), model.encoder_config,
             model.encoder);

  std::vector<Graph::Id> cache(patches.size(), -1);
  auto aggregate_patch = [&](std::size_t index) {
    if (cache[index] < 0) {
      const auto coords = geometry::patch_coordinates(cloud, patches[index]);
      cache[index] =
          aggregate(g, g.gather_rows(features, patches[index].members),
                    gcn_adjacency(coords), model.aggregator);
    }
    return cache[index];
  };

  std::vector<Graph::Id> terms;
  terms.reserve(pairs.similar.size() + pairs.dissimilar.size());
  for (const auto& pair : pairs.similar) {
    const Graph::Id anchor = aggregate_patch(pair.anchor_index);
    const Graph::Id rotated =
        aggregate(g,
                  encode(g, coordinates_tensor(pair.rotated_coords),
                         model.encoder_config, model.encoder),
                  gcn_adjacency(pair.rotated_coords), model.aggregator);
    terms.push_back(pair_log_term(
        g, discriminate(g, anchor, rotated, model.discriminator), true));
  }
  for (const auto& pair : pairs.dissimilar) {
    const Graph::Id anchor = aggregate_patch(pair.anchor_index);
    const Graph::Id partner = aggregate_patch(pair.partner_index);
    terms.push_back(pair_log_term(
        g, discriminate(g, anchor, partner, model.discriminator), false));
  }

  Graph::Id total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = g.add(total, terms[i]);
  const Graph::Id loss =
      g.scale(total, -1.0 / static_cast<double>(terms.size()));
  g.backward(loss);

  StepResult result;
  result.loss = g.value(loss).scalar_value();
  result.gradients = g.parameter_gradients();
  result.bn_updates = g.batch_norm_updates();
  return result;
}

std::vector<EpochLoss> train_similarity(const std::vector<PointCloud>& clouds,
                                        SimilarityModel& model,
                                        const TrainConfig& config,
                                        AdamState& optimizer,
                                        int start_epoch) {
  if (clouds.empty())
    throw std::invalid_argument("train_similarity: no training clouds");
  std::vector<std::vector<Patch>> patches;
  patches.reserve(clouds.size());
  for (const auto& cloud : clouds)
    patches.push_back(sample_patches(cloud, config.patch_count, config.patch_k));
  return train_similarity(clouds, patches, model, config, optimizer,
                          start_epoch);
}

std::vector<EpochLoss> train_similarity(
    const std::vector<PointCloud>& clouds,
    const std::vector<std::vector<Patch>>& patches, SimilarityModel& model,
    const TrainConfig& config, AdamState& optimizer, int start_epoch) {
  if (clouds.empty())
    throw std::invalid_argument("train_similarity: no training clouds");
  if (patches.size() != clouds.size())
    throw std::invalid_argument("train_similarity: patch list count mismatch");
  if (config.batch_clouds < 1)
    throw std::invalid_argument("train_similarity: batch_clouds must be >= 1");

  std::vector<EpochLoss> history;
  for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(config.lr, epoch);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < clouds.size();
         begin += config.batch_clouds) {
      const std::size_t end =
          std::min(begin + config.batch_clouds, clouds.size());
      std::vector<StepResult> results(end - begin);
      parallel_for(end - begin, [&](std::size_t offset) {
        const std::size_t ci = begin + offset;
        const std::size_t pair_count =
            config.pairs_per_cloud == 0
                ? patches[ci].size()
                : std::min(config.pairs_per_cloud, patches[ci].size());
        const PairBatch pairs = sample_pairs(
            clouds[ci], patches[ci], pair_count, pair_count,
            mix_seed(config.seed, kTagPairs, static_cast<std::uint64_t>(epoch),
                     ci));
        results[offset] =
            similarity_step(model, clouds[ci], patches[ci], pairs);
      });

      std::vector<Tensor> gradients;
      for (std::size_t r = 0; r < results.size(); ++r) {
        if (r == 0) {
          gradients = std::move(results[r].gradients);
        } else {
          for (std::size_t p = 0; p < gradients.size(); ++p) {
            const Tensor& g = results[r].gradients[p];
            for (std::size_t i = 0; i < g.numel(); ++i) gradients[p][i] += g[i];
          }
        }
        epoch_loss += results[r].loss;
      }
      const double scale = 1.0 / static_cast<double>(results.size());
      for (auto& g : gradients)
        for (double& v : g.data()) v *= scale;
      optimizer.step(model.params, gradients, lr);
      for (const auto& r : results)
        autodiff::apply_batch_norm_updates(model.params, r.bn_updates);
    }
    history.push_back({epoch, epoch_loss / static_cast<double>(clouds.size())});
  }
  return history;
}

double cosine_similarity_abs(std::span<const double> a,
                             std::span<const double> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine_similarity_abs: size mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double norm_a = std::sqrt(na);
  const double norm_b = std::sqrt(nb);
  if (norm_a < 1e-12 || norm_b < 1e-12) return 0.0;
  return std::min(std::abs(dot) / (norm_a * norm_b), 1.0);
}

std::vector<std::vector<double>> aggregated_features(
    const SimilarityModel& model, const PointCloud& cloud,
    const std::vector<Patch>& patches) {
  Graph g(model.params, Graph::Mode::eval);
  const Graph::Id features =
      encode(g, coordinates_tensor(cloud.points), model.encoder_config,
             model.encoder);
  std::vector<std::vector<double>> out;
  out.reserve(patches.size());
  for (const auto& patch : patches) {
    const auto coords = geometry::patch_coordinates(cloud, patch);
    const Graph::Id agg =
        aggregate(g, g.gather_rows(features, patch.members),
                  gcn_adjacency(coords), model.aggregator);
    out.push_back(g.value(agg).data());
  }
  return out;
}

double patch_similarity(const SimilarityModel& model, const PointCloud& cloud,
                        const Patch& a, const Patch& b) {
  const auto features = aggregated_features(model, cloud, {a, b});
  return cosine_similarity_abs(features[0], features[1]);
}

std::vector<std::vector<double>> similarity_matrix(
    const SimilarityModel& model, const PointCloud& cloud,
    const std::vector<Patch>& patches) {
  const auto features = aggregated_features(model, cloud, patches);
  const std::size_t m = patches.size();
  std::vector<std::vector<double>> table(m, std::vector<double>(m, 0.0));
  std::vector<std::pair<std::size_t, std::size_t>> index_pairs;
  index_pairs.reserve(m * (m + 1) / 2);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i; j < m; ++j) index_pairs.emplace_back(i, j);
  parallel_for(index_pairs.size(), [&](std::size_t p) {
    const auto [i, j] = index_pairs[p];
    const double s = cosine_similarity_abs(features[i], features[j]);
    table[i][j] = s;
    table[j][i] = s;
  });
  return table;
}

std::vector<std::size_t> mine_from_matrix(
    const std::vector<std::vector<double>>& similarity, std::size_t anchor,
    double lower, double upper) {
  if (!(0.0 <= lower && lower <= upper && upper <= 1.0))
    throw std::invalid_argument("mine: need 0 <= lower <= upper <= 1");
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < similarity.size(); ++j) {
    if (j == anchor) continue;
    const double s = similarity[anchor][j];
    if (s >= lower && s <= upper) out.push_back(j);
  }
  return out;
}

std::vector<std::size_t> mine_hard_negatives(const SimilarityModel& model,
                                             const PointCloud& cloud,
                                             const std::vector<Patch>& patches,
                                             std::size_t anchor, double lower,
                                             double upper) {
  if (anchor >= patches.size())
    throw std::invalid_argument("mine_hard_negatives: anchor out of range");
  return mine_from_matrix(similarity_matrix(model, cloud, patches), anchor,
                          lower, upper);
}

}  // namespace scpc::selfsim
