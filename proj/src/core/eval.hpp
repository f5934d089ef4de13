#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "core/contrastive.hpp"

namespace scpc::eval {

using contrastive::ContrastiveModel;
using geometry::PointCloud;

// Eval-mode point-wise features of the representation encoder, P x F.
autodiff::Tensor pointwise_features(const ContrastiveModel& model,
                                    const PointCloud& cloud);

// Column-wise mean of the point-wise features.
std::vector<double> global_feature(const ContrastiveModel& model,
                                   const PointCloud& cloud);

enum class ProbeLoss { multinomial_logistic, multiclass_hinge };

struct ProbeConfig {
  ProbeLoss loss = ProbeLoss::multinomial_logistic;
  int epochs = 300;
  double lr = 0.1;
  bool fine_tune = false;
  int fine_tune_epochs = 5;
  std::size_t fine_tune_batch_clouds = 8;
  // 1 = strictly linear; more layers insert LeakyReLU hidden blocks.
  int head_layers = 1;
  std::size_t hidden_width = 64;
  std::uint64_t seed = 1;
};

// Linear (or small MLP) head trained with full-batch Adam.
struct LinearHead {
  autodiff::ParamStore params;
  std::vector<std::pair<int, int>> layers;  // (weight, bias) parameter indices
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
};

LinearHead make_head(std::size_t input_dim, std::size_t output_dim,
                     int n_layers, std::size_t hidden_width,
                     std::uint64_t seed);

autodiff::Graph::Id head_forward(autodiff::Graph& g, autodiff::Graph::Id x,
                                 const LinearHead& head);

void train_head(LinearHead& head, const autodiff::Tensor& features,
                const std::vector<std::size_t>& labels,
                const ProbeConfig& config);

std::vector<int> head_predict(const LinearHead& head,
                              const autodiff::Tensor& features);

double accuracy(std::span<const int> predictions, std::span<const int> labels);

struct ProbeResult {
  LinearHead head;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

// Gradient-trained linear probe on frozen feature rows. Requires at least
// two distinct classes in the training labels.
ProbeResult train_probe(const autodiff::Tensor& train_features,
                        const std::vector<int>& train_labels,
                        const autodiff::Tensor& test_features,
                        const std::vector<int>& test_labels,
                        const ProbeConfig& config);

// Joint training of the encoder copy and a linear head on global features.
ProbeResult train_probe_fine_tune(ContrastiveModel& model,
                                  const std::vector<PointCloud>& train_clouds,
                                  const std::vector<int>& train_labels,
                                  const std::vector<PointCloud>& test_clouds,
                                  const std::vector<int>& test_labels,
                                  const ProbeConfig& config);

// Per-shape IoU: mean over parts of |pred & gt| / |pred | gt|, counting a
// part absent from both prediction and ground truth as IoU 1.
double shape_iou(std::span<const int> predictions, std::span<const int> labels,
                 int n_parts);

struct MiouResult {
  std::vector<double> shape_ious;
  std::vector<double> per_part_iou;  // mean over shapes, per part
  double miou = 0.0;                 // mean over shapes
};

MiouResult miou(const std::vector<std::vector<int>>& predictions,
                const std::vector<std::vector<int>>& labels, int n_parts);

// sigma == 0 returns the cloud unchanged (bitwise).
PointCloud with_noise(const PointCloud& cloud, double sigma,
                      std::uint64_t seed);

// n_points == cloud.size() returns the cloud unchanged; otherwise keeps a
// seeded random subset in original point order.
PointCloud with_density(const PointCloud& cloud, std::size_t n_points,
                        std::uint64_t seed);

}  // namespace scpc::eval
