#include "core/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace scpc::autodiff {

double lr_at(const LrSchedule& schedule, int epoch) {
  if (epoch < 0) throw std::invalid_argument("lr_at: epoch must be >= 0");
  if (schedule.decay_interval_epochs < 1)
    throw std::invalid_argument("lr_at: decay interval must be >= 1");
  const int steps = epoch / schedule.decay_interval_epochs;
  return schedule.initial_lr * std::pow(schedule.decay_factor, steps);
}

AdamState::AdamState(const ParamStore& params, double lr, double beta1,
                     double beta2, double epsilon)
    : lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& shape = params.entry(static_cast<int>(i)).value.shape();
    m_.emplace_back(shape);
    v_.emplace_back(shape);
  }
}

void AdamState::step(ParamStore& params, const std::vector<Tensor>& gradients,
                     double lr_override) {
  if (gradients.size() != m_.size())
    throw std::invalid_argument("adam step: gradient count mismatch");
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double bias1 = 1.0 - std::pow(beta1_, t);
  const double bias2 = 1.0 - std::pow(beta2_, t);
  for (std::size_t p = 0; p < m_.size(); ++p) {
    auto& entry = params.entry(static_cast<int>(p));
    if (!entry.trainable) continue;
    const Tensor& g = gradients[p];
    if (!g.same_shape(entry.value))
      throw std::invalid_argument("adam step: gradient shape mismatch for " +
                                  entry.name);
    Tensor& m = m_[p];
    Tensor& v = v_[p];
    for (std::size_t i = 0; i < g.numel(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      entry.value[i] -= lr_override * m_hat / (std::sqrt(v_hat) + epsilon_);
    }
  }
}

}  // namespace scpc::autodiff
