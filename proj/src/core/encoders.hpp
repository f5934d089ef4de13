#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/geometry.hpp"
#include "core/graph.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace scpc::encoders {

using autodiff::Graph;
using autodiff::ParamStore;
using autodiff::Tensor;

// Stack of edge-convolution layers followed by one linear projection.
// concat_layers selects the representation-encoder variant that feeds the
// concatenation of every layer's output into the projection; otherwise only
// the last layer feeds it.
struct EncoderConfig {
  std::vector<std::size_t> channel_widths;
  std::size_t knn_k = 8;
  bool dynamic_graph = true;
  std::size_t output_dim = 16;
  bool concat_layers = false;

  std::size_t n_layers() const { return channel_widths.size(); }
  void validate() const;
};

struct BatchNormHandles {
  int gamma = -1, beta = -1, running_mean = -1, running_var = -1;
};

struct EdgeConvHandles {
  int theta = -1;  // weight on (neighbor - center)
  int phi = -1;    // weight on the center feature
  BatchNormHandles bn;
};

struct EncoderHandles {
  std::vector<EdgeConvHandles> layers;
  int fc_weight = -1, fc_bias = -1;
};

struct AggregatorHandles {
  int gcn_weight = -1;
};

struct DiscriminatorHandles {
  int weight = -1, bias = -1;
};

Tensor xavier_init(std::size_t fan_in, std::size_t fan_out,
                   std::vector<std::size_t> shape, Rng& rng);

Tensor coordinates_tensor(const std::vector<geometry::Vec3>& points);

EncoderHandles make_encoder(ParamStore& params, const EncoderConfig& config,
                            const std::string& prefix, Rng& rng);
AggregatorHandles make_aggregator(ParamStore& params, std::size_t feature_dim,
                                  const std::string& prefix, Rng& rng);
DiscriminatorHandles make_discriminator(ParamStore& params,
                                        std::size_t feature_dim,
                                        const std::string& prefix, Rng& rng);

// Per-row k nearest rows under Euclidean distance in feature space, ties by
// lowest index, row itself excluded. All lists have exactly k entries.
std::vector<std::vector<std::size_t>> dynamic_knn_graph(const Tensor& features,
                                                        std::size_t k);

// out_i = max over neighbors j of LeakyReLU(BN(theta (x_j - x_i) + phi x_i)).
// All adjacency lists must have equal length. use_batch_norm exists for
// isolated-op tests; the encoders always normalize.
Graph::Id edgeconv(Graph& g, Graph::Id features,
                   const std::vector<std::vector<std::size_t>>& adjacency,
                   const EdgeConvHandles& handles, bool use_batch_norm = true);

// Full encoder pass over a P x 3 coordinate matrix; returns P x output_dim
// point-wise features. The neighbor graph is rebuilt per layer from feature
// values when dynamic_graph is set, otherwise always from the coordinates.
Graph::Id encode(Graph& g, const Tensor& coords, const EncoderConfig& config,
                 const EncoderHandles& handles);

// Symmetric-normalized adjacency with self-loops over the intra-patch kNN
// graph (k = min(4, n-1), undirected union).
Tensor gcn_adjacency(const std::vector<geometry::Vec3>& member_coords);

// One GCN layer, LeakyReLU, then column-wise mean: (k+1) x C -> 1 x C.
Graph::Id aggregate(Graph& g, Graph::Id patch_features,
                    const Tensor& normalized_adjacency,
                    const AggregatorHandles& handles);

// sigmoid(w . concat(a, b) + bias), logit clamped to +-30.
Graph::Id discriminate(Graph& g, Graph::Id aggregated_a,
                       Graph::Id aggregated_b,
                       const DiscriminatorHandles& handles);

}  // namespace scpc::encoders
