#pragma once

#include <cstdint>
#include <vector>

#include "core/graph.hpp"
#include "core/tensor.hpp"

namespace scpc::autodiff {

struct LrSchedule {
  double initial_lr = 0.002;
  double decay_factor = 1.0;
  int decay_interval_epochs = 1;
};

// initial_lr * decay_factor^floor(epoch / interval)
double lr_at(const LrSchedule& schedule, int epoch);

// Adam with bias correction. Moments are kept for every store entry
// (non-trainable entries are skipped by step()), indexed like the store.
class AdamState {
 public:
  explicit AdamState(const ParamStore& params, double lr = 0.002,
                     double beta1 = 0.9, double beta2 = 0.999,
                     double epsilon = 1e-8);

  void step(ParamStore& params, const std::vector<Tensor>& gradients,
            double lr_override);
  void step(ParamStore& params, const std::vector<Tensor>& gradients) {
    step(params, gradients, lr_);
  }

  std::int64_t step_count() const { return step_count_; }
  double lr() const { return lr_; }
  double beta1() const { return beta1_; }
  double beta2() const { return beta2_; }
  double epsilon() const { return epsilon_; }

  // Serialization access for checkpoints.
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }
  void set_step_count(std::int64_t t) { step_count_ = t; }

 private:
  double lr_, beta1_, beta2_, epsilon_;
  std::int64_t step_count_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace scpc::autodiff
