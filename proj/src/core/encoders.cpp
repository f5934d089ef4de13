#include "core/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace scpc::encoders {

void EncoderConfig::validate() const {
  if (channel_widths.empty())
    throw std::invalid_argument("encoder config: no layers");
  for (std::size_t w : channel_widths) {
    if (w == 0) throw std::invalid_argument("encoder config: zero-width layer");
  }
  if (knn_k < 1) throw std::invalid_argument("encoder config: knn_k must be >= 1");
  if (output_dim == 0)
    throw std::invalid_argument("encoder config: output_dim must be >= 1");
}

Tensor xavier_init(std::size_t fan_in, std::size_t fan_out,
                   std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor coordinates_tensor(const std::vector<geometry::Vec3>& points) {
  Tensor t(points.size(), 3);
  for (std::size_t i = 0; i < points.size(); ++i) {
    t.at(i, 0) = points[i][0];
    t.at(i, 1) = points[i][1];
    t.at(i, 2) = points[i][2];
  }
  return t;
}

EncoderHandles make_encoder(ParamStore& params, const EncoderConfig& config,
                            const std::string& prefix, Rng& rng) {
  config.validate();
  EncoderHandles handles;
  std::size_t in_dim = 3;
  for (std::size_t l = 0; l < config.n_layers(); ++l) {
    const std::size_t out_dim = config.channel_widths[l];
    const std::string base = prefix + ".layer" + std::to_string(l);
    EdgeConvHandles layer;
    layer.theta = params.add(base + ".theta",
                             xavier_init(in_dim, out_dim, {in_dim, out_dim}, rng));
    layer.phi = params.add(base + ".phi",
                           xavier_init(in_dim, out_dim, {in_dim, out_dim}, rng));
    Tensor ones(std::vector<std::size_t>{out_dim});
    ones.fill(1.0);
    layer.bn.gamma = params.add(base + ".bn.gamma", ones);
    layer.bn.beta =
        params.add(base + ".bn.beta", Tensor(std::vector<std::size_t>{out_dim}));
    layer.bn.running_mean = params.add(
        base + ".bn.running_mean", Tensor(std::vector<std::size_t>{out_dim}),
        /*trainable=*/false);
    layer.bn.running_var =
        params.add(base + ".bn.running_var", ones, /*trainable=*/false);
    handles.layers.push_back(layer);
    in_dim = out_dim;
  }
  std::size_t fc_in = config.concat_layers
                          ? [&] {
                              std::size_t total = 0;
                              for (std::size_t w : config.channel_widths)
                                total += w;
                              return total;
                            }()
                          : config.channel_widths.back();
  handles.fc_weight =
      params.add(prefix + ".fc.weight",
                 xavier_init(fc_in, config.output_dim,
                             {fc_in, config.output_dim}, rng));
  handles.fc_bias =
      params.add(prefix + ".fc.bias",
                 Tensor(std::vector<std::size_t>{config.output_dim}));
  return handles;
}

AggregatorHandles make_aggregator(ParamStore& params, std::size_t feature_dim,
                                  const std::string& prefix, Rng& rng) {
  AggregatorHandles handles;
  handles.gcn_weight =
      params.add(prefix + ".gcn.weight",
                 xavier_init(feature_dim, feature_dim,
                             {feature_dim, feature_dim}, rng));
  return handles;
}

DiscriminatorHandles make_discriminator(ParamStore& params,
                                        std::size_t feature_dim,
                                        const std::string& prefix, Rng& rng) {
  DiscriminatorHandles handles;
  handles.weight = params.add(
      prefix + ".weight",
      xavier_init(2 * feature_dim, 1, {2 * feature_dim, 1}, rng));
  handles.bias =
      params.add(prefix + ".bias", Tensor(std::vector<std::size_t>{1}));
  return handles;
}

std::vector<std::vector<std::size_t>> dynamic_knn_graph(const Tensor& features,
                                                        std::size_t k) {
  const std::size_t rows = features.rows();
  const std::size_t cols = features.cols();
  if (k >= rows) {
    throw std::invalid_argument("dynamic_knn_graph: k = " + std::to_string(k) +
                                " must be below the row count " +
                                std::to_string(rows));
  }
  std::vector<std::vector<std::size_t>> adjacency(rows);
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t i = 0; i < rows; ++i) {
    order.clear();
    order.reserve(rows - 1);
    for (std::size_t j = 0; j < rows; ++j) {
      if (j == i) continue;
      double d2 = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const double d = features.at(i, c) - features.at(j, c);
        d2 += d * d;
      }
      order.emplace_back(d2, j);
    }
    std::sort(order.begin(), order.end());
    adjacency[i].reserve(k);
    for (std::size_t t = 0; t < k; ++t) adjacency[i].push_back(order[t].second);
  }
  return adjacency;
}

Graph::Id edgeconv(Graph& g, Graph::Id features,
                   const std::vector<std::vector<std::size_t>>& adjacency,
                   const EdgeConvHandles& handles, bool use_batch_norm) {
  const std::size_t points = g.value(features).rows();
  if (adjacency.size() != points)
    throw std::invalid_argument("edgeconv: adjacency size mismatch");
  const std::size_t k = adjacency.empty() ? 0 : adjacency[0].size();
  if (k == 0) throw std::invalid_argument("edgeconv: empty neighbor lists");
  std::vector<std::size_t> centers, neighbors;
  centers.reserve(points * k);
  neighbors.reserve(points * k);
  for (std::size_t i = 0; i < points; ++i) {
    if (adjacency[i].size() != k)
      throw std::invalid_argument("edgeconv: ragged adjacency lists");
    for (std::size_t j : adjacency[i]) {
      centers.push_back(i);
      neighbors.push_back(j);
    }
  }
  const Graph::Id x_center = g.gather_rows(features, centers);
  const Graph::Id x_neighbor = g.gather_rows(features, neighbors);
  const Graph::Id difference = g.sub(x_neighbor, x_center);
  Graph::Id edges = g.add(g.matmul(difference, g.param(handles.theta)),
                          g.matmul(x_center, g.param(handles.phi)));
  if (use_batch_norm) {
    edges = g.batch_norm(edges, g.param(handles.bn.gamma),
                         g.param(handles.bn.beta), handles.bn.running_mean,
                         handles.bn.running_var);
  }
  return g.max_pool_rows(g.leaky_relu(edges, 0.2), points);
}

namespace {

// A single point has no neighbors; fall back to a self edge so the
// difference term vanishes and only the center path contributes.
std::vector<std::vector<std::size_t>> layer_graph(const Tensor& source,
                                                  std::size_t knn_k) {
  const std::size_t points = source.rows();
  if (points == 1) return {{0}};
  return dynamic_knn_graph(source, std::min(knn_k, points - 1));
}

}  // namespace

Graph::Id encode(Graph& g, const Tensor& coords, const EncoderConfig& config,
                 const EncoderHandles& handles) {
  config.validate();
  if (coords.ndim() != 2 || coords.cols() != 3)
    throw std::invalid_argument("encode: coordinates must be P x 3, got " +
                                coords.shape_string());
  Graph::Id x = g.input(coords);
  std::vector<Graph::Id> layer_outputs;
  layer_outputs.reserve(config.n_layers());
  for (std::size_t l = 0; l < config.n_layers(); ++l) {
    const bool from_features = config.dynamic_graph && l > 0;
    const auto adjacency =
        layer_graph(from_features ? g.value(x) : coords, config.knn_k);
    x = edgeconv(g, x, adjacency, handles.layers[l]);
    layer_outputs.push_back(x);
  }
  const Graph::Id merged =
      config.concat_layers ? g.concat_cols(layer_outputs) : x;
  return g.add(g.matmul(merged, g.param(handles.fc_weight)),
               g.param(handles.fc_bias));
}

Tensor gcn_adjacency(const std::vector<geometry::Vec3>& member_coords) {
  const std::size_t n = member_coords.size();
  if (n == 0) throw std::invalid_argument("gcn_adjacency: empty patch");
  Tensor a(n, n);
  if (n == 1) {
    a.at(0, 0) = 1.0;
    return a;
  }
  const std::size_t k = std::min<std::size_t>(4, n - 1);
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t i = 0; i < n; ++i) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      order.emplace_back(
          geometry::squared_distance(member_coords[i], member_coords[j]), j);
    }
    std::sort(order.begin(), order.end());
    for (std::size_t t = 0; t < k; ++t) {
      a.at(i, order[t].second) = 1.0;
      a.at(order[t].second, i) = 1.0;  // undirected union
    }
  }
  for (std::size_t i = 0; i < n; ++i) a.at(i, i) = 1.0;

  std::vector<double> inv_sqrt_degree(n);
  for (std::size_t i = 0; i < n; ++i) {
    double degree = 0.0;
    for (std::size_t j = 0; j < n; ++j) degree += a.at(i, j);
    inv_sqrt_degree[i] = 1.0 / std::sqrt(degree);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      a.at(i, j) *= inv_sqrt_degree[i] * inv_sqrt_degree[j];
  return a;
}

Graph::Id aggregate(Graph& g, Graph::Id patch_features,
                    const Tensor& normalized_adjacency,
                    const AggregatorHandles& handles) {
  const std::size_t rows = g.value(patch_features).rows();
  if (normalized_adjacency.rows() != rows ||
      normalized_adjacency.cols() != rows) {
    throw std::invalid_argument("aggregate: adjacency " +
                                normalized_adjacency.shape_string() +
                                " does not match feature rows");
  }
  const Graph::Id mixed =
      g.matmul(g.input(normalized_adjacency),
               g.matmul(patch_features, g.param(handles.gcn_weight)));
  return g.avg_pool_rows(g.leaky_relu(mixed, 0.2), 1);
}

Graph::Id discriminate(Graph& g, Graph::Id aggregated_a,
                       Graph::Id aggregated_b,
                       const DiscriminatorHandles& handles) {
  const Tensor& va = g.value(aggregated_a);
  const Tensor& vb = g.value(aggregated_b);
  if (va.rows() != 1 || vb.rows() != 1 || !va.same_shape(vb)) {
    throw std::invalid_argument("discriminate: feature shapes " +
                                va.shape_string() + " and " +
                                vb.shape_string() + " do not form a pair");
  }
  const Graph::Id pair = g.concat_cols({aggregated_a, aggregated_b});
  const Graph::Id logit =
      g.add(g.matmul(pair, g.param(handles.weight)), g.param(handles.bias));
  return g.sigmoid(g.clamp(logit, -Graph::kLogitClampMagnitude,
                           Graph::kLogitClampMagnitude));
}

}  // namespace scpc::encoders
