#include "core/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "core/parallel.hpp"
#include "core/rng.hpp"

namespace scpc::eval {

using autodiff::Graph;
using autodiff::ParamStore;
using autodiff::Tensor;

autodiff::Tensor pointwise_features(const ContrastiveModel& model,
                                    const PointCloud& cloud) {
  Graph g(model.params, Graph::Mode::eval);
  const Graph::Id features =
      encoders::encode(g, encoders::coordinates_tensor(cloud.points),
                       model.encoder_config, model.encoder);
  return g.value(features);
}

std::vector<double> global_feature(const ContrastiveModel& model,
                                   const PointCloud& cloud) {
  const Tensor features = pointwise_features(model, cloud);
  std::vector<double> mean(features.cols(), 0.0);
  for (std::size_t r = 0; r < features.rows(); ++r)
    for (std::size_t c = 0; c < features.cols(); ++c)
      mean[c] += features.at(r, c);
  for (double& v : mean) v /= static_cast<double>(features.rows());
  return mean;
}

LinearHead make_head(std::size_t input_dim, std::size_t output_dim,
                     int n_layers, std::size_t hidden_width,
                     std::uint64_t seed) {
  if (n_layers < 1)
    throw std::invalid_argument("make_head: need at least one layer");
  LinearHead head;
  head.input_dim = input_dim;
  head.output_dim = output_dim;
  Rng rng(mix_seed(seed, 0x4eadull));
  std::size_t in = input_dim;
  for (int l = 0; l < n_layers; ++l) {
    const bool last = l == n_layers - 1;
    const std::size_t out = last ? output_dim : hidden_width;
    const std::string base = "head.layer" + std::to_string(l);
    const int w = head.params.add(
        base + ".weight", encoders::xavier_init(in, out, {in, out}, rng));
    const int b =
        head.params.add(base + ".bias", Tensor(std::vector<std::size_t>{out}));
    head.layers.emplace_back(w, b);
    in = out;
  }
  return head;
}

namespace {

// Forward through explicit (weight, bias) index pairs so the head can run
// against any store holding them (its own, or a merged fine-tune store).
Graph::Id head_forward_indexed(Graph& g, Graph::Id x,
                               const std::vector<std::pair<int, int>>& layers) {
  Graph::Id h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    h = g.add(g.matmul(h, g.param(layers[l].first)),
              g.param(layers[l].second));
    if (l + 1 < layers.size()) h = g.leaky_relu(h, 0.2);
  }
  return h;
}

Graph::Id head_loss(Graph& g, Graph::Id logits,
                    const std::vector<std::size_t>& labels, ProbeLoss loss) {
  return loss == ProbeLoss::multinomial_logistic
             ? g.nll_softmax(logits, labels)
             : g.multiclass_hinge(logits, labels);
}

std::vector<std::size_t> to_size_t(const std::vector<int>& labels) {
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (int l : labels) {
    if (l < 0) throw std::invalid_argument("negative class label");
    out.push_back(static_cast<std::size_t>(l));
  }
  return out;
}

std::size_t distinct_count(const std::vector<int>& labels) {
  return std::set<int>(labels.begin(), labels.end()).size();
}

}  // namespace

Graph::Id head_forward(Graph& g, Graph::Id x, const LinearHead& head) {
  return head_forward_indexed(g, x, head.layers);
}

void train_head(LinearHead& head, const Tensor& features,
                const std::vector<std::size_t>& labels,
                const ProbeConfig& config) {
  if (config.epochs < 1)
    throw std::invalid_argument("train_head: epochs must be >= 1");
  autodiff::AdamState optimizer(head.params, config.lr);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Graph g(head.params, Graph::Mode::training);
    const Graph::Id logits = head_forward(g, g.input(features), head);
    const Graph::Id loss = head_loss(g, logits, labels, config.loss);
    g.backward(loss);
    optimizer.step(head.params, g.parameter_gradients(), config.lr);
  }
}

std::vector<int> head_predict(const LinearHead& head, const Tensor& features) {
  Graph g(head.params, Graph::Mode::eval);
  const Tensor logits = g.value(head_forward(g, g.input(features), head));
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c) {
      if (logits.at(r, c) > logits.at(r, best)) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("accuracy: length mismatch");
  if (predictions.empty()) throw std::invalid_argument("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

ProbeResult train_probe(const Tensor& train_features,
                        const std::vector<int>& train_labels,
                        const Tensor& test_features,
                        const std::vector<int>& test_labels,
                        const ProbeConfig& config) {
  if (train_labels.size() != train_features.rows())
    throw std::invalid_argument("train_probe: train label count mismatch");
  if (test_labels.size() != test_features.rows())
    throw std::invalid_argument("train_probe: test label count mismatch");
  if (distinct_count(train_labels) < 2) {
    throw std::invalid_argument(
        "train_probe: training split must contain at least 2 classes");
  }
  const std::size_t n_classes =
      static_cast<std::size_t>(
          *std::max_element(train_labels.begin(), train_labels.end())) + 1;

  ProbeResult result;
  result.head = make_head(train_features.cols(), n_classes, config.head_layers,
                          config.hidden_width, config.seed);
  train_head(result.head, train_features, to_size_t(train_labels), config);
  result.train_accuracy =
      accuracy(head_predict(result.head, train_features), train_labels);
  result.test_accuracy =
      accuracy(head_predict(result.head, test_features), test_labels);
  return result;
}

ProbeResult train_probe_fine_tune(ContrastiveModel& model,
                                  const std::vector<PointCloud>& train_clouds,
                                  const std::vector<int>& train_labels,
                                  const std::vector<PointCloud>& test_clouds,
                                  const std::vector<int>& test_labels,
                                  const ProbeConfig& config) {
  if (train_clouds.size() != train_labels.size())
    throw std::invalid_argument("fine-tune: train label count mismatch");
  if (test_clouds.size() != test_labels.size())
    throw std::invalid_argument("fine-tune: test label count mismatch");
  if (distinct_count(train_labels) < 2) {
    throw std::invalid_argument(
        "fine-tune: training split must contain at least 2 classes");
  }
  const std::size_t n_classes =
      static_cast<std::size_t>(
          *std::max_element(train_labels.begin(), train_labels.end())) + 1;
  const std::size_t feature_dim = model.encoder_config.output_dim;

  LinearHead head =
      make_head(feature_dim, n_classes, 1, config.hidden_width, config.seed);

  // One merged store over encoder + head so a single tape spans both.
  // Encoder entries come first in their original order, which keeps the
  // model's parameter indices valid against the merged store.
  ParamStore merged;
  for (std::size_t p = 0; p < model.params.size(); ++p) {
    const auto& e = model.params.entry(static_cast<int>(p));
    merged.add(e.name, e.value, e.trainable);
  }
  std::vector<std::pair<int, int>> merged_layers;
  for (const auto& [w, b] : head.layers) {
    const auto& we = head.params.entry(w);
    const auto& be = head.params.entry(b);
    merged_layers.emplace_back(merged.add(we.name, we.value, we.trainable),
                               merged.add(be.name, be.value, be.trainable));
  }

  autodiff::AdamState optimizer(merged, config.lr);
  const std::vector<std::size_t> labels = to_size_t(train_labels);

  for (int epoch = 0; epoch < config.fine_tune_epochs; ++epoch) {
    for (std::size_t begin = 0; begin < train_clouds.size();
         begin += config.fine_tune_batch_clouds) {
      const std::size_t end =
          std::min(begin + config.fine_tune_batch_clouds, train_clouds.size());
      Graph g(merged, Graph::Mode::training);
      Graph::Id total = -1;
      for (std::size_t ci = begin; ci < end; ++ci) {
        const Graph::Id features = encoders::encode(
            g, encoders::coordinates_tensor(train_clouds[ci].points),
            model.encoder_config, model.encoder);
        const Graph::Id global = g.avg_pool_rows(features, 1);
        const Graph::Id logits = head_forward_indexed(g, global, merged_layers);
        const Graph::Id loss = head_loss(g, logits, {labels[ci]}, config.loss);
        total = total < 0 ? loss : g.add(total, loss);
      }
      const Graph::Id batch_loss =
          g.scale(total, 1.0 / static_cast<double>(end - begin));
      g.backward(batch_loss);
      optimizer.step(merged, g.parameter_gradients(), config.lr);
      autodiff::apply_batch_norm_updates(merged, g.batch_norm_updates());
    }
  }

  // Copy the tuned values back into the caller's model and the head.
  for (std::size_t p = 0; p < model.params.size(); ++p) {
    model.params.entry(static_cast<int>(p)).value =
        merged.entry(static_cast<int>(p)).value;
  }
  for (std::size_t l = 0; l < head.layers.size(); ++l) {
    head.params.entry(head.layers[l].first).value =
        merged.entry(merged_layers[l].first).value;
    head.params.entry(head.layers[l].second).value =
        merged.entry(merged_layers[l].second).value;
  }

  auto global_rows = [&](const std::vector<PointCloud>& clouds) {
    Tensor rows(clouds.size(), feature_dim);
    for (std::size_t i = 0; i < clouds.size(); ++i) {
      const auto feature = global_feature(model, clouds[i]);
      for (std::size_t c = 0; c < feature_dim; ++c) rows.at(i, c) = feature[c];
    }
    return rows;
  };

  ProbeResult result;
  result.train_accuracy =
      accuracy(head_predict(head, global_rows(train_clouds)), train_labels);
  result.test_accuracy =
      accuracy(head_predict(head, global_rows(test_clouds)), test_labels);
  result.head = std::move(head);
  return result;
}

double shape_iou(std::span<const int> predictions, std::span<const int> labels,
                 int n_parts) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("shape_iou: length mismatch");
  if (n_parts < 1)
    throw std::invalid_argument("shape_iou: n_parts must be >= 1");
  double total = 0.0;
  for (int part = 0; part < n_parts; ++part) {
    std::size_t intersection = 0, unions = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      const bool p = predictions[i] == part;
      const bool l = labels[i] == part;
      intersection += (p && l) ? 1 : 0;
      unions += (p || l) ? 1 : 0;
    }
    total += unions == 0 ? 1.0
                         : static_cast<double>(intersection) /
                               static_cast<double>(unions);
  }
  return total / static_cast<double>(n_parts);
}

MiouResult miou(const std::vector<std::vector<int>>& predictions,
                const std::vector<std::vector<int>>& labels, int n_parts) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("miou: shape count mismatch");
  if (predictions.empty()) throw std::invalid_argument("miou: no shapes");
  MiouResult result;
  result.shape_ious.reserve(predictions.size());
  result.per_part_iou.assign(static_cast<std::size_t>(n_parts), 0.0);
  for (std::size_t s = 0; s < predictions.size(); ++s) {
    result.shape_ious.push_back(shape_iou(predictions[s], labels[s], n_parts));
    for (int part = 0; part < n_parts; ++part) {
      std::size_t intersection = 0, unions = 0;
      for (std::size_t i = 0; i < predictions[s].size(); ++i) {
        const bool p = predictions[s][i] == part;
        const bool l = labels[s][i] == part;
        intersection += (p && l) ? 1 : 0;
        unions += (p || l) ? 1 : 0;
      }
      result.per_part_iou[part] +=
          unions == 0 ? 1.0
                      : static_cast<double>(intersection) /
                            static_cast<double>(unions);
    }
    result.miou += result.shape_ious.back();
  }
  result.miou /= static_cast<double>(predictions.size());
  for (double& v : result.per_part_iou)
    v /= static_cast<double>(predictions.size());
  return result;
}

PointCloud with_noise(const PointCloud& cloud, double sigma,
                      std::uint64_t seed) {
  if (sigma < 0.0) throw std::invalid_argument("with_noise: sigma must be >= 0");
  if (sigma == 0.0) return cloud;
  PointCloud out = cloud;
  Rng rng(mix_seed(seed, 0x4015eull));
  for (auto& p : out.points) {
    p[0] += sigma * rng.normal();
    p[1] += sigma * rng.normal();
    p[2] += sigma * rng.normal();
  }
  return out;
}

PointCloud with_density(const PointCloud& cloud, std::size_t n_points,
                        std::uint64_t seed) {
  if (n_points < 1 || n_points > cloud.size())
    throw std::invalid_argument("with_density: point count out of range");
  if (n_points == cloud.size()) return cloud;
  std::vector<std::size_t> order(cloud.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0xde45ull));
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    const std::size_t j = rng.uniform_index(i + 1);
    std::swap(order[i], order[j]);
  }
  order.resize(n_points);
  std::sort(order.begin(), order.end());
  PointCloud out;
  out.points.reserve(n_points);
  if (cloud.has_labels()) out.labels.reserve(n_points);
  for (std::size_t idx : order) {
    out.points.push_back(cloud.points[idx]);
    if (cloud.has_labels()) out.labels.push_back(cloud.labels[idx]);
  }
  return out;
}

}  // namespace scpc::eval
