#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace scpc::autodiff {

enum class OpKind {
  input,
  param,
  matmul,
  add,
  sub,
  mul,
  scale,
  add_const,
  concat_cols,
  gather_rows,
  gather_cols,
  transpose,
  leaky_relu,
  sigmoid,
  exp_elem,
  log_elem,
  clamp,
  max_pool_rows,
  avg_pool_rows,
  batch_norm,
  l2_norm,
  l2_normalize_rows,
  dot,
  sum_all,
  mean_all,
  log_sum_exp,
  nll_softmax,
  multiclass_hinge,
};

const char* op_name(OpKind kind);

// Named tensors with trainable flags. Batch-norm running statistics live
// here as non-trainable entries so checkpoints capture them.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    bool trainable;
  };

  int add(std::string name, Tensor value, bool trainable = true);
  int find(const std::string& name) const;  // -1 when absent
  Entry& entry(int index) { return entries_[index]; }
  const Entry& entry(int index) const { return entries_[index]; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<Entry> entries_;
};

struct BatchNormUpdate {
  int running_mean_index;
  int running_var_index;
  Tensor batch_mean;
  Tensor batch_var;
};

// running = momentum * running + (1 - momentum) * batch, momentum 0.9.
// Callers apply updates in a fixed sample order to keep training
// reproducible under any thread count.
void apply_batch_norm_updates(ParamStore& params,
                              const std::vector<BatchNormUpdate>& updates);

// Append-only reverse-mode tape over a read-only ParamStore. Values are
// computed eagerly as nodes are added; inputs always precede outputs, so
// backward() is a single reverse sweep. Every op validates its result for
// non-finite values (training diverging aborts with a diagnostic).
//
// A Graph never mutates the store: parameter gradients accumulate into
// per-graph buffers (parameter_gradients()) and training-mode batch-norm
// statistics are reported through batch_norm_updates() for the caller to
// apply in a fixed order.
class Graph {
 public:
  enum class Mode { training, eval };
  using Id = int;

  Graph(const ParamStore& params, Mode mode);

  Mode mode() const { return mode_; }
  std::size_t node_count() const { return nodes_.size(); }

  Id input(Tensor value);
  Id param(int param_index);

  Id matmul(Id a, Id b);
  // Same shape, or b broadcast as a bias row over the rows of a.
  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);
  Id scale(Id a, double factor);
  Id add_const(Id a, double offset);
  Id concat_cols(const std::vector<Id>& parts);
  Id gather_rows(Id a, std::vector<std::size_t> rows);
  Id gather_cols(Id a, std::vector<std::size_t> cols);
  Id transpose(Id a);
  Id leaky_relu(Id a, double negative_slope = 0.2);
  Id sigmoid(Id a);
  Id exp_elem(Id a);
  Id log_elem(Id a);
  Id clamp(Id a, double lo, double hi);
  // Rows are split into `groups` equal contiguous blocks reduced
  // independently; groups == 1 reduces all rows to one.
  Id max_pool_rows(Id a, std::size_t groups = 1);
  Id avg_pool_rows(Id a, std::size_t groups = 1);
  // Training mode normalizes with batch statistics (needs >= 2 rows) and
  // records a running-stat update; eval mode reads the running statistics
  // from the store. epsilon 1e-5.
  Id batch_norm(Id a, Id gamma, Id beta, int running_mean_index,
                int running_var_index);
  Id l2_norm(Id a);
  Id l2_normalize_rows(Id a);
  Id dot(Id a, Id b);
  Id sum_all(Id a);
  Id mean_all(Id a);
  Id log_sum_exp(Id a);
  Id nll_softmax(Id logits, std::vector<std::size_t> labels);
  Id multiclass_hinge(Id logits, std::vector<std::size_t> labels);

  const Tensor& value(Id id) const;
  // Reverse sweep from a scalar loss node.
  void backward(Id loss);
  const Tensor& grad(Id id);
  // Dense over the store: zero tensors for parameters the loss never touched.
  std::vector<Tensor> parameter_gradients() const;
  const std::vector<BatchNormUpdate>& batch_norm_updates() const {
    return bn_updates_;
  }

  void set_finite_checks(bool enabled) { finite_checks_ = enabled; }
  // Test hook: negates the input gradients produced by one op kind, used to
  // prove the gradient checker catches a broken backward rule.
  void set_grad_sign_flip(OpKind kind) { flip_kind_ = kind; }

  static constexpr double kBatchNormEpsilon = 1e-5;
  static constexpr double kLogitClampMagnitude = 30.0;

 private:
  struct Node {
    OpKind op;
    std::vector<Id> inputs;
    int param_index = -1;
    Tensor value;
    Tensor grad;
    bool grad_ready = false;
    // Per-op context.
    double arg0 = 0.0, arg1 = 0.0;
    std::vector<std::size_t> indices;
    std::size_t groups = 1;
    Tensor saved0, saved1;
    int bn_mean_index = -1, bn_var_index = -1;
  };

  Id push(Node node);
  Node& node(Id id);
  const Node& node(Id id) const;
  Tensor& ensure_grad(Id id);
  void accumulate(Id id, const Tensor& delta);
  void backprop_node(Id id);
  [[noreturn]] void fail(const std::string& message) const;

  const ParamStore& params_;
  Mode mode_;
  bool finite_checks_ = true;
  std::optional<OpKind> flip_kind_;
  std::vector<Node> nodes_;
  std::vector<BatchNormUpdate> bn_updates_;
  bool backward_done_ = false;
};

}  // namespace scpc::autodiff
