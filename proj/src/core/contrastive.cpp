#include "core/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "core/parallel.hpp"
#include "core/rng.hpp"

namespace scpc::contrastive {

using autodiff::AdamState;
using autodiff::Graph;
using autodiff::Tensor;
using encoders::aggregate;
using encoders::coordinates_tensor;
using encoders::encode;
using encoders::gcn_adjacency;

namespace {

constexpr std::uint64_t kTagInit = 0xc0ull;
constexpr std::uint64_t kTagRotation = 0xc1ull;

std::vector<double> normalized_copy(std::span<const double> v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  std::vector<double> out(v.begin(), v.end());
  if (norm < 1e-12) {
    std::fill(out.begin(), out.end(), 0.0);
    return out;
  }
  for (double& x : out) x /= norm;
  return out;
}

}  // namespace

ContrastiveModel ContrastiveModel::create(const encoders::EncoderConfig& config,
                                          std::uint64_t seed) {
  config.validate();
  ContrastiveModel model;
  model.encoder_config = config;
  Rng rng(mix_seed(seed, kTagInit));
  model.encoder = encoders::make_encoder(model.params, config, "e2", rng);
  model.aggregator =
      encoders::make_aggregator(model.params, config.output_dim, "g2", rng);
  return model;
}

double info_nce_loss(std::span<const double> anchor,
                     std::span<const double> positive,
                     const std::vector<std::vector<double>>& negatives,
                     double temperature, bool normalize) {
  if (temperature <= 0.0)
    throw std::invalid_argument("info_nce_loss: temperature must be > 0");
  if (anchor.size() != positive.size())
    throw std::invalid_argument("info_nce_loss: dimension mismatch");

  auto dot = [](std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
  };

  std::vector<double> a(anchor.begin(), anchor.end());
  std::vector<double> p(positive.begin(), positive.end());
  if (normalize) {
    a = normalized_copy(anchor);
    p = normalized_copy(positive);
  }

  std::vector<double> logits;
  logits.reserve(1 + negatives.size());
  logits.push_back(dot(a, p) / temperature);
  for (const auto& negative : negatives) {
    if (negative.size() != anchor.size())
      throw std::invalid_argument("info_nce_loss: dimension mismatch");
    const std::vector<double> n =
        normalize ? normalized_copy(negative)
                  : std::vector<double>(negative.begin(), negative.end());
    logits.push_back(dot(a, n) / temperature);
  }

  double max_logit = logits[0];
  for (double l : logits) max_logit = std::max(max_logit, l);
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - max_logit);
  return (max_logit + std::log(sum)) - logits[0];
}

BuildExamplesResult build_examples(
    const PointCloud& cloud, const std::vector<Patch>& patches,
    const std::vector<std::vector<double>>& similarity,
    const selfsim::ThresholdSchedule& schedule, int epoch, int dilation,
    std::size_t patch_k, bool mining_enabled) {
  if (similarity.size() != patches.size())
    throw std::invalid_argument("build_examples: similarity table size mismatch");
  double lower = 0.0, upper = 1.0;
  if (mining_enabled) {
    const auto thresholds = selfsim::thresholds_at(schedule, epoch);
    lower = thresholds.first;
    upper = thresholds.second;
  }
  BuildExamplesResult result;
  result.examples.reserve(patches.size());
  for (std::size_t i = 0; i < patches.size(); ++i) {
    auto negatives = selfsim::mine_from_matrix(similarity, i, lower, upper);
    if (negatives.empty()) {
      ++result.skipped_anchors;
      continue;
    }
    ContrastExample example;
    example.anchor = patches[i];
    example.positive =
        geometry::dilated_patch(cloud, patches[i].center, patch_k, dilation);
    example.negative_indices = std::move(negatives);
    result.examples.push_back(std::move(example));
  }
  return result;
}

void TrainConfig::validate() const {
  if (temperature <= 0.0)
    throw std::invalid_argument("contrastive config: temperature must be > 0");
  if (epochs < 0)
    throw std::invalid_argument("contrastive config: epochs must be >= 0");
  if (batch_clouds < 1)
    throw std::invalid_argument("contrastive config: batch_clouds must be >= 1");
  if (dilation < 1)
    throw std::invalid_argument("contrastive config: dilation must be >= 1");
  schedule.validate();
}

StepResult contrastive_step(const ContrastiveModel& model,
                            const PointCloud& cloud,
                            const std::vector<Patch>& patches,
                            const std::vector<ContrastExample>& examples,
                            const TrainConfig& config,
                            std::uint64_t rotation_seed) {
  Graph g(model.params, Graph::Mode::training);
  const Graph::Id features =
      encode(g, coordinates_tensor(cloud.points), model.encoder_config,
             model.encoder);

  std::vector<Graph::Id> cache(patches.size(), -1);
  auto aggregate_indexed = [&](std::size_t index) {
    if (cache[index] < 0) {
      const auto coords = geometry::patch_coordinates(cloud, patches[index]);
      cache[index] =
          aggregate(g, g.gather_rows(features, patches[index].members),
                    gcn_adjacency(coords), model.aggregator);
    }
    return cache[index];
  };
  auto aggregate_patch = [&](const Patch& patch) {
    const auto coords = geometry::patch_coordinates(cloud, patch);
    return aggregate(g, g.gather_rows(features, patch.members),
                     gcn_adjacency(coords), model.aggregator);
  };
  auto maybe_normalize = [&](Graph::Id id) {
    return config.normalize_features ? g.l2_normalize_rows(id) : id;
  };

  Graph::Id total = -1;
  for (std::size_t e = 0; e < examples.size(); ++e) {
    const ContrastExample& example = examples[e];
    std::size_t anchor_index = patches.size();
    for (std::size_t i = 0; i < patches.size(); ++i) {
      if (patches[i].center == example.anchor.center) {
        anchor_index = i;
        break;
      }
    }
    const Graph::Id z_anchor =
        maybe_normalize(anchor_index < patches.size()
                            ? aggregate_indexed(anchor_index)
                            : aggregate_patch(example.anchor));

    Graph::Id z_positive;
    if (config.rotated_positive) {
      const auto coords = geometry::patch_coordinates(cloud, example.anchor);
      const auto rotation = geometry::random_rotation(
          mix_seed(rotation_seed, kTagRotation, e), geometry::centroid(coords));
      const auto rotated =
          geometry::apply_rotation(cloud, example.anchor, rotation);
      z_positive = maybe_normalize(
          aggregate(g,
                    encode(g, coordinates_tensor(rotated),
                           model.encoder_config, model.encoder),
                    gcn_adjacency(rotated), model.aggregator));
    } else {
      z_positive = maybe_normalize(aggregate_patch(example.positive));
    }

    const double inv_tau = 1.0 / config.temperature;
    const Graph::Id positive_logit =
        g.scale(g.dot(z_anchor, z_positive), inv_tau);
    std::vector<Graph::Id> logits = {positive_logit};
    for (std::size_t j : example.negative_indices) {
      const Graph::Id z_negative = maybe_normalize(aggregate_indexed(j));
      logits.push_back(g.scale(g.dot(z_anchor, z_negative), inv_tau));
    }
    const Graph::Id example_loss =
        g.sub(g.log_sum_exp(g.concat_cols(logits)), positive_logit);
    total = total < 0 ? example_loss : g.add(total, example_loss);
  }

  StepResult result;
  if (total < 0) return result;
  g.backward(total);
  result.loss_sum = g.value(total).scalar_value();
  result.example_count = examples.size();
  result.gradients = g.parameter_gradients();
  result.bn_updates = g.batch_norm_updates();
  return result;
}

std::vector<EpochStats> train_contrastive(
    const std::vector<PointCloud>& clouds,
    const selfsim::SimilarityModel& similarity_model, ContrastiveModel& model,
    const TrainConfig& config, AdamState& optimizer, int start_epoch) {
  config.validate();
  if (clouds.empty())
    throw std::invalid_argument("train_contrastive: no training clouds");

  std::vector<std::vector<Patch>> patches;
  std::vector<std::vector<std::vector<double>>> similarity;
  patches.reserve(clouds.size());
  similarity.reserve(clouds.size());
  for (const auto& cloud : clouds) {
    patches.push_back(
        selfsim::sample_patches(cloud, config.patch_count, config.patch_k));
    similarity.push_back(
        selfsim::similarity_matrix(similarity_model, cloud, patches.back()));
  }

  std::vector<EpochStats> history;
  for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(config.lr, epoch);
    double lower = 0.0, upper = 1.0;
    if (config.mining_enabled) {
      const auto thresholds = selfsim::thresholds_at(config.schedule, epoch);
      lower = thresholds.first;
      upper = thresholds.second;
    }

    std::vector<BuildExamplesResult> built(clouds.size());
    std::size_t skipped = 0;
    std::size_t negative_total = 0;
    std::size_t anchor_total = 0;
    for (std::size_t ci = 0; ci < clouds.size(); ++ci) {
      built[ci] = build_examples(clouds[ci], patches[ci], similarity[ci],
                                 config.schedule, epoch, config.dilation,
                                 config.patch_k, config.mining_enabled);
      skipped += built[ci].skipped_anchors;
      anchor_total += patches[ci].size();
      for (const auto& example : built[ci].examples)
        negative_total += example.negative_indices.size();
    }

    double loss_sum = 0.0;
    std::size_t example_total = 0;
    for (std::size_t begin = 0; begin < clouds.size();
         begin += config.batch_clouds) {
      const std::size_t end =
          std::min(begin + config.batch_clouds, clouds.size());
      std::vector<StepResult> results(end - begin);
      parallel_for(end - begin, [&](std::size_t offset) {
        const std::size_t ci = begin + offset;
        results[offset] = contrastive_step(
            model, clouds[ci], patches[ci], built[ci].examples, config,
            mix_seed(config.seed, kTagRotation,
                     static_cast<std::uint64_t>(epoch), ci));
      });

      std::size_t batch_examples = 0;
      for (const auto& r : results) batch_examples += r.example_count;
      if (batch_examples == 0) continue;

      std::vector<Tensor> gradients;
      for (std::size_t r = 0; r < results.size(); ++r) {
        if (results[r].gradients.empty()) continue;
        if (gradients.empty()) {
          gradients = std::move(results[r].gradients);
        } else {
          for (std::size_t p = 0; p < gradients.size(); ++p) {
            const Tensor& g = results[r].gradients[p];
            for (std::size_t i = 0; i < g.numel(); ++i) gradients[p][i] += g[i];
          }
        }
        loss_sum += results[r].loss_sum;
        example_total += results[r].example_count;
      }
      const double scale = 1.0 / static_cast<double>(batch_examples);
      for (auto& g : gradients)
        for (double& v : g.data()) v *= scale;
      optimizer.step(model.params, gradients, lr);
      for (const auto& r : results)
        autodiff::apply_batch_norm_updates(model.params, r.bn_updates);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.loss = example_total == 0
                     ? 0.0
                     : loss_sum / static_cast<double>(example_total);
    stats.lower_threshold = lower;
    stats.upper_threshold = upper;
    stats.mean_negatives =
        anchor_total == 0 ? 0.0
                          : static_cast<double>(negative_total) /
                                static_cast<double>(anchor_total);
    stats.skipped_anchors = skipped;
    history.push_back(stats);
  }
  return history;
}

}  // namespace scpc::contrastive
