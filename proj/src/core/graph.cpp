#include "core/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace scpc::autodiff {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::input: return "input";
    case OpKind::param: return "param";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::add_const: return "add_const";
    case OpKind::concat_cols: return "concat_cols";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::gather_cols: return "gather_cols";
    case OpKind::transpose: return "transpose";
    case OpKind::leaky_relu: return "leaky_relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::exp_elem: return "exp";
    case OpKind::log_elem: return "log";
    case OpKind::clamp: return "clamp";
    case OpKind::max_pool_rows: return "max_pool_rows";
    case OpKind::avg_pool_rows: return "avg_pool_rows";
    case OpKind::batch_norm: return "batch_norm";
    case OpKind::l2_norm: return "l2_norm";
    case OpKind::l2_normalize_rows: return "l2_normalize_rows";
    case OpKind::dot: return "dot";
    case OpKind::sum_all: return "sum_all";
    case OpKind::mean_all: return "mean_all";
    case OpKind::log_sum_exp: return "log_sum_exp";
    case OpKind::nll_softmax: return "nll_softmax";
    case OpKind::multiclass_hinge: return "multiclass_hinge";
  }
  return "?";
}

int ParamStore::add(std::string name, Tensor value, bool trainable) {
  if (find(name) >= 0)
    throw std::invalid_argument("duplicate parameter name: " + name);
  entries_.push_back({std::move(name), std::move(value), trainable});
  return static_cast<int>(entries_.size()) - 1;
}

int ParamStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

void apply_batch_norm_updates(ParamStore& params,
                              const std::vector<BatchNormUpdate>& updates) {
  constexpr double kMomentum = 0.9;
  for (const auto& u : updates) {
    Tensor& mean = params.entry(u.running_mean_index).value;
    Tensor& var = params.entry(u.running_var_index).value;
    for (std::size_t i = 0; i < mean.numel(); ++i) {
      mean[i] = kMomentum * mean[i] + (1.0 - kMomentum) * u.batch_mean[i];
      var[i] = kMomentum * var[i] + (1.0 - kMomentum) * u.batch_var[i];
    }
  }
}

Graph::Graph(const ParamStore& params, Mode mode)
    : params_(params), mode_(mode) {}

Graph::Id Graph::push(Node n) {
  if (finite_checks_ && !n.value.all_finite()) {
    fail(std::string("non-finite values produced by op '") + op_name(n.op) +
         "' at node " + std::to_string(nodes_.size()));
  }
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size()) - 1;
}

Graph::Node& Graph::node(Id id) { return nodes_.at(static_cast<size_t>(id)); }
const Graph::Node& Graph::node(Id id) const {
  return nodes_.at(static_cast<size_t>(id));
}

void Graph::fail(const std::string& message) const {
  throw std::runtime_error("autodiff: " + message);
}

const Tensor& Graph::value(Id id) const { return node(id).value; }

Graph::Id Graph::input(Tensor value) {
  Node n;
  n.op = OpKind::input;
  n.value = std::move(value);
  return push(std::move(n));
}

Graph::Id Graph::param(int param_index) {
  if (param_index < 0 || param_index >= static_cast<int>(params_.size()))
    throw std::invalid_argument("param index out of range");
  Node n;
  n.op = OpKind::param;
  n.param_index = param_index;
  n.value = params_.entry(param_index).value;
  return push(std::move(n));
}

Graph::Id Graph::matmul(Id a, Id b) {
  Node n;
  n.op = OpKind::matmul;
  n.inputs = {a, b};
  n.value = matmul_nn(value(a), value(b));
  return push(std::move(n));
}

Graph::Id Graph::add(Id a, Id b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  Node n;
  n.op = OpKind::add;
  n.inputs = {a, b};
  if (va.same_shape(vb)) {
    n.value = va;
    for (std::size_t i = 0; i < vb.numel(); ++i) n.value[i] += vb[i];
  } else if (vb.rows() == 1 && vb.cols() == va.cols() && va.ndim() == 2) {
    n.arg0 = 1.0;  // bias broadcast marker
    n.value = va;
    for (std::size_t r = 0; r < va.rows(); ++r)
      for (std::size_t c = 0; c < va.cols(); ++c) n.value.at(r, c) += vb[c];
  } else {
    throw std::invalid_argument("add: shapes " + va.shape_string() + " and " +
                                vb.shape_string() + " do not conform");
  }
  return push(std::move(n));
}

Graph::Id Graph::sub(Id a, Id b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (!va.same_shape(vb))
    throw std::invalid_argument("sub: shapes " + va.shape_string() + " and " +
                                vb.shape_string() + " differ");
  Node n;
  n.op = OpKind::sub;
  n.inputs = {a, b};
  n.value = va;
  for (std::size_t i = 0; i < vb.numel(); ++i) n.value[i] -= vb[i];
  return push(std::move(n));
}

Graph::Id Graph::mul(Id a, Id b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (!va.same_shape(vb))
    throw std::invalid_argument("mul: shapes " + va.shape_string() + " and " +
                                vb.shape_string() + " differ");
  Node n;
  n.op = OpKind::mul;
  n.inputs = {a, b};
  n.value = va;
  for (std::size_t i = 0; i < vb.numel(); ++i) n.value[i] *= vb[i];
  return push(std::move(n));
}

Graph::Id Graph::scale(Id a, double factor) {
  Node n;
  n.op = OpKind::scale;
  n.inputs = {a};
  n.arg0 = factor;
  n.value = value(a);
  for (double& v : n.value.data()) v *= factor;
  return push(std::move(n));
}

Graph::Id Graph::add_const(Id a, double offset) {
  Node n;
  n.op = OpKind::add_const;
  n.inputs = {a};
  n.arg0 = offset;
  n.value = value(a);
  for (double& v : n.value.data()) v += offset;
  return push(std::move(n));
}

Graph::Id Graph::concat_cols(const std::vector<Id>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t rows = value(parts[0]).rows();
  std::size_t cols = 0;
  for (Id id : parts) {
    if (value(id).rows() != rows) {
      throw std::invalid_argument(
          "concat_cols: row mismatch between " +
          value(parts[0]).shape_string() + " and " + value(id).shape_string());
    }
    cols += value(id).cols();
  }
  Node n;
  n.op = OpKind::concat_cols;
  n.inputs = parts;
  n.value = Tensor(rows, cols);
  std::size_t offset = 0;
  for (Id id : parts) {
    const Tensor& v = value(id);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c)
        n.value.at(r, offset + c) = v.at(r, c);
    offset += v.cols();
  }
  return push(std::move(n));
}

Graph::Id Graph::gather_rows(Id a, std::vector<std::size_t> rows) {
  const Tensor& va = value(a);
  if (rows.empty()) throw std::invalid_argument("gather_rows: empty index set");
  for (std::size_t r : rows) {
    if (r >= va.rows())
      throw std::invalid_argument("gather_rows: index out of range");
  }
  Node n;
  n.op = OpKind::gather_rows;
  n.inputs = {a};
  n.value = Tensor(rows.size(), va.cols());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < va.cols(); ++c)
      n.value.at(r, c) = va.at(rows[r], c);
  n.indices = std::move(rows);
  return push(std::move(n));
}

Graph::Id Graph::gather_cols(Id a, std::vector<std::size_t> cols) {
  const Tensor& va = value(a);
  if (cols.empty()) throw std::invalid_argument("gather_cols: empty index set");
  for (std::size_t c : cols) {
    if (c >= va.cols())
      throw std::invalid_argument("gather_cols: index out of range");
  }
  Node n;
  n.op = OpKind::gather_cols;
  n.inputs = {a};
  n.value = Tensor(va.rows(), cols.size());
  for (std::size_t r = 0; r < va.rows(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c)
      n.value.at(r, c) = va.at(r, cols[c]);
  n.indices = std::move(cols);
  return push(std::move(n));
}

Graph::Id Graph::transpose(Id a) {
  const Tensor& va = value(a);
  Node n;
  n.op = OpKind::transpose;
  n.inputs = {a};
  n.value = Tensor(va.cols(), va.rows());
  for (std::size_t r = 0; r < va.rows(); ++r)
    for (std::size_t c = 0; c < va.cols(); ++c) n.value.at(c, r) = va.at(r, c);
  return push(std::move(n));
}

Graph::Id Graph::leaky_relu(Id a, double negative_slope) {
  Node n;
  n.op = OpKind::leaky_relu;
  n.inputs = {a};
  n.arg0 = negative_slope;
  n.value = value(a);
  for (double& v : n.value.data()) {
    if (v <= 0.0) v *= negative_slope;
  }
  return push(std::move(n));
}

Graph::Id Graph::sigmoid(Id a) {
  Node n;
  n.op = OpKind::sigmoid;
  n.inputs = {a};
  n.value = value(a);
  for (double& v : n.value.data()) v = 1.0 / (1.0 + std::exp(-v));
  return push(std::move(n));
}

Graph::Id Graph::exp_elem(Id a) {
  Node n;
  n.op = OpKind::exp_elem;
  n.inputs = {a};
  n.value = value(a);
  for (double& v : n.value.data()) v = std::exp(v);
  return push(std::move(n));
}

Graph::Id Graph::log_elem(Id a) {
  Node n;
  n.op = OpKind::log_elem;
  n.inputs = {a};
  n.value = value(a);
  for (double& v : n.value.data()) v = std::log(v);
  return push(std::move(n));
}

Graph::Id Graph::clamp(Id a, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  Node n;
  n.op = OpKind::clamp;
  n.inputs = {a};
  n.arg0 = lo;
  n.arg1 = hi;
  n.saved0 = value(a);  // pre-clamp values decide gradient flow
  n.value = value(a);
  for (double& v : n.value.data()) v = std::min(std::max(v, lo), hi);
  return push(std::move(n));
}

Graph::Id Graph::max_pool_rows(Id a, std::size_t groups) {
  const Tensor& va = value(a);
  if (groups == 0 || va.rows() % groups != 0) {
    throw std::invalid_argument("max_pool_rows: " + std::to_string(va.rows()) +
                                " rows not divisible into " +
                                std::to_string(groups) + " groups");
  }
  const std::size_t per = va.rows() / groups;
  Node n;
  n.op = OpKind::max_pool_rows;
  n.inputs = {a};
  n.groups = groups;
  n.value = Tensor(groups, va.cols());
  n.indices.resize(groups * va.cols());
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t c = 0; c < va.cols(); ++c) {
      std::size_t best = g * per;
      double best_v = va.at(best, c);
      for (std::size_t r = g * per + 1; r < (g + 1) * per; ++r) {
        if (va.at(r, c) > best_v) {
          best_v = va.at(r, c);
          best = r;
        }
      }
      n.value.at(g, c) = best_v;
      n.indices[g * va.cols() + c] = best;
    }
  }
  return push(std::move(n));
}

Graph::Id Graph::avg_pool_rows(Id a, std::size_t groups) {
  const Tensor& va = value(a);
  if (groups == 0 || va.rows() % groups != 0) {
    throw std::invalid_argument("avg_pool_rows: " + std::to_string(va.rows()) +
                                " rows not divisible into " +
                                std::to_string(groups) + " groups");
  }
  const std::size_t per = va.rows() / groups;
  Node n;
  n.op = OpKind::avg_pool_rows;
  n.inputs = {a};
  n.groups = groups;
  n.value = Tensor(groups, va.cols());
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t c = 0; c < va.cols(); ++c) {
      double acc = 0.0;
      for (std::size_t r = g * per; r < (g + 1) * per; ++r) acc += va.at(r, c);
      n.value.at(g, c) = acc / static_cast<double>(per);
    }
  }
  return push(std::move(n));
}

Graph::Id Graph::batch_norm(Id a, Id gamma, Id beta, int running_mean_index,
                            int running_var_index) {
  const Tensor& x = value(a);
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  if (x.ndim() != 2) throw std::invalid_argument("batch_norm: need a matrix");
  if (value(gamma).numel() != cols || value(beta).numel() != cols) {
    throw std::invalid_argument(
        "batch_norm: scale/shift size does not match " + x.shape_string());
  }
  Node n;
  n.op = OpKind::batch_norm;
  n.inputs = {a, gamma, beta};
  n.bn_mean_index = running_mean_index;
  n.bn_var_index = running_var_index;

  Tensor mean(std::vector<std::size_t>{cols});
  Tensor var(std::vector<std::size_t>{cols});
  if (mode_ == Mode::training) {
    if (rows < 2) {
      throw std::invalid_argument(
          "batch_norm: training mode needs a batch of at least 2 rows, got " +
          std::to_string(rows) + "; increase the batch size");
    }
    for (std::size_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (std::size_t r = 0; r < rows; ++r) acc += x.at(r, c);
      mean[c] = acc / static_cast<double>(rows);
    }
    for (std::size_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const double d = x.at(r, c) - mean[c];
        acc += d * d;
      }
      var[c] = acc / static_cast<double>(rows);
    }
    bn_updates_.push_back({running_mean_index, running_var_index, mean, var});
  } else {
    mean = params_.entry(running_mean_index).value;
    var = params_.entry(running_var_index).value;
    if (mean.numel() != cols || var.numel() != cols)
      throw std::invalid_argument("batch_norm: running statistic size mismatch");
  }

  Tensor inv_std(std::vector<std::size_t>{cols});
  for (std::size_t c = 0; c < cols; ++c)
    inv_std[c] = 1.0 / std::sqrt(var[c] + kBatchNormEpsilon);

  Tensor x_hat(rows, cols);
  n.value = Tensor(rows, cols);
  const Tensor& g = value(gamma);
  const Tensor& b = value(beta);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double xh = (x.at(r, c) - mean[c]) * inv_std[c];
      x_hat.at(r, c) = xh;
      n.value.at(r, c) = g[c] * xh + b[c];
    }
  }
  n.saved0 = std::move(x_hat);
  n.saved1 = std::move(inv_std);
  return push(std::move(n));
}

Graph::Id Graph::l2_norm(Id a) {
  const Tensor& va = value(a);
  double acc = 0.0;
  for (double v : va.data()) acc += v * v;
  Node n;
  n.op = OpKind::l2_norm;
  n.inputs = {a};
  n.value = Tensor::scalar(std::sqrt(acc));
  return push(std::move(n));
}

Graph::Id Graph::l2_normalize_rows(Id a) {
  const Tensor& va = value(a);
  const std::size_t rows = va.rows();
  const std::size_t cols = va.cols();
  Node n;
  n.op = OpKind::l2_normalize_rows;
  n.inputs = {a};
  n.value = Tensor(rows, cols);
  n.saved0 = Tensor(std::vector<std::size_t>{rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += va.at(r, c) * va.at(r, c);
    const double norm = std::sqrt(acc);
    n.saved0[r] = norm;
    if (norm >= 1e-12) {
      for (std::size_t c = 0; c < cols; ++c)
        n.value.at(r, c) = va.at(r, c) / norm;
    }
  }
  return push(std::move(n));
}

Graph::Id Graph::dot(Id a, Id b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  if (va.numel() != vb.numel()) {
    throw std::invalid_argument("dot: shapes " + va.shape_string() + " and " +
                                vb.shape_string() + " differ in size");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < va.numel(); ++i) acc += va[i] * vb[i];
  Node n;
  n.op = OpKind::dot;
  n.inputs = {a, b};
  n.value = Tensor::scalar(acc);
  return push(std::move(n));
}

Graph::Id Graph::sum_all(Id a) {
  double acc = 0.0;
  for (double v : value(a).data()) acc += v;
  Node n;
  n.op = OpKind::sum_all;
  n.inputs = {a};
  n.value = Tensor::scalar(acc);
  return push(std::move(n));
}

Graph::Id Graph::mean_all(Id a) {
  double acc = 0.0;
  for (double v : value(a).data()) acc += v;
  Node n;
  n.op = OpKind::mean_all;
  n.inputs = {a};
  n.value = Tensor::scalar(acc / static_cast<double>(value(a).numel()));
  return push(std::move(n));
}

Graph::Id Graph::log_sum_exp(Id a) {
  const Tensor& va = value(a);
  double max_v = va[0];
  for (double v : va.data()) max_v = std::max(max_v, v);
  double sum = 0.0;
  for (double v : va.data()) sum += std::exp(v - max_v);
  Node n;
  n.op = OpKind::log_sum_exp;
  n.inputs = {a};
  n.value = Tensor::scalar(max_v + std::log(sum));
  n.saved0 = va;
  for (double& v : n.saved0.data()) v = std::exp(v - max_v) / sum;
  return push(std::move(n));
}

Graph::Id Graph::nll_softmax(Id logits, std::vector<std::size_t> labels) {
  const Tensor& x = value(logits);
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  if (labels.size() != rows)
    throw std::invalid_argument("nll_softmax: one label per row required");
  for (std::size_t y : labels) {
    if (y >= cols) throw std::invalid_argument("nll_softmax: label out of range");
  }
  Node n;
  n.op = OpKind::nll_softmax;
  n.inputs = {logits};
  n.saved0 = Tensor(rows, cols);  // softmax
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double max_v = x.at(r, 0);
    for (std::size_t c = 1; c < cols; ++c) max_v = std::max(max_v, x.at(r, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sum += std::exp(x.at(r, c) - max_v);
    const double lse = max_v + std::log(sum);
    loss += lse - x.at(r, labels[r]);
    for (std::size_t c = 0; c < cols; ++c)
      n.saved0.at(r, c) = std::exp(x.at(r, c) - max_v) / sum;
  }
  n.value = Tensor::scalar(loss / static_cast<double>(rows));
  n.indices = std::move(labels);
  return push(std::move(n));
}

Graph::Id Graph::multiclass_hinge(Id logits, std::vector<std::size_t> labels) {
  const Tensor& x = value(logits);
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  if (cols < 2)
    throw std::invalid_argument("multiclass_hinge: need at least 2 classes");
  if (labels.size() != rows)
    throw std::invalid_argument("multiclass_hinge: one label per row required");
  Node n;
  n.op = OpKind::multiclass_hinge;
  n.inputs = {logits};
  n.indices.resize(2 * rows);  // [best_other, label] per row
  n.saved0 = Tensor(std::vector<std::size_t>{rows});  // active flags
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t y = labels[r];
    if (y >= cols)
      throw std::invalid_argument("multiclass_hinge: label out of range");
    std::size_t best = y == 0 ? 1 : 0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (c == y) continue;
      if (x.at(r, c) > x.at(r, best)) best = c;
    }
    const double margin = 1.0 + x.at(r, best) - x.at(r, y);
    const bool active = margin > 0.0;
    loss += active ? margin : 0.0;
    n.indices[2 * r] = best;
    n.indices[2 * r + 1] = y;
    n.saved0[r] = active ? 1.0 : 0.0;
  }
  n.value = Tensor::scalar(loss / static_cast<double>(rows));
  return push(std::move(n));
}

Tensor& Graph::ensure_grad(Id id) {
  Node& n = node(id);
  if (!n.grad_ready) {
    n.grad = Tensor(n.value.shape());
    n.grad_ready = true;
  }
  return n.grad;
}

void Graph::accumulate(Id id, const Tensor& delta) {
  Tensor& g = ensure_grad(id);
  for (std::size_t i = 0; i < g.numel(); ++i) g[i] += delta[i];
}

void Graph::backward(Id loss) {
  if (backward_done_)
    throw std::logic_error("backward already ran on this graph");
  backward_done_ = true;
  if (!value(loss).is_scalar()) {
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                value(loss).shape_string());
  }
  ensure_grad(loss)[0] = 1.0;
  for (Id id = loss; id >= 0; --id) {
    if (node(id).grad_ready) backprop_node(id);
  }
}

void Graph::backprop_node(Id id) {
  Node& n = node(id);
  const Tensor& dy = n.grad;
  const bool flip = flip_kind_ && *flip_kind_ == n.op;

  auto give = [&](Id target, Tensor delta) {
    if (flip) {
      for (double& v : delta.data()) v = -v;
    }
    accumulate(target, delta);
  };

  switch (n.op) {
    case OpKind::input:
    case OpKind::param:
      return;

    case OpKind::matmul: {
      const Tensor& a = value(n.inputs[0]);
      const Tensor& b = value(n.inputs[1]);
      give(n.inputs[0], matmul_nt(dy, b));
      give(n.inputs[1], matmul_tn(a, dy));
      return;
    }

    case OpKind::add: {
      give(n.inputs[0], dy);
      if (n.arg0 == 1.0) {  // bias broadcast
        const Tensor& vb = value(n.inputs[1]);
        Tensor db(vb.shape());
        for (std::size_t r = 0; r < dy.rows(); ++r)
          for (std::size_t c = 0; c < dy.cols(); ++c) db[c] += dy.at(r, c);
        give(n.inputs[1], std::move(db));
      } else {
        give(n.inputs[1], dy);
      }
      return;
    }

    case OpKind::sub: {
      give(n.inputs[0], dy);
      Tensor db = dy;
      for (double& v : db.data()) v = -v;
      give(n.inputs[1], std::move(db));
      return;
    }

    case OpKind::mul: {
      const Tensor& a = value(n.inputs[0]);
      const Tensor& b = value(n.inputs[1]);
      Tensor da = dy, db = dy;
      for (std::size_t i = 0; i < dy.numel(); ++i) {
        da[i] *= b[i];
        db[i] *= a[i];
      }
      give(n.inputs[0], std::move(da));
      give(n.inputs[1], std::move(db));
      return;
    }

    case OpKind::scale: {
      Tensor da = dy;
      for (double& v : da.data()) v *= n.arg0;
      give(n.inputs[0], std::move(da));
      return;
    }

    case OpKind::add_const:
      give(n.inputs[0], dy);
      return;

    case OpKind::concat_cols: {
      std::size_t offset = 0;
      for (Id part : n.inputs) {
        const Tensor& v = value(part);
        Tensor dp(v.shape());
        for (std::size_t r = 0; r < v.rows(); ++r)
          for (std::size_t c = 0; c < v.cols(); ++c)
            dp[r * v.cols() + c] = dy.at(r, offset + c);
        give(part, std::move(dp));
        offset += v.cols();
      }
      return;
    }

    case OpKind::gather_rows: {
      const Tensor& a = value(n.inputs[0]);
      Tensor da(a.shape());
      for (std::size_t r = 0; r < n.indices.size(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c)
          da.at(n.indices[r], c) += dy.at(r, c);
      give(n.inputs[0], std::move(da));
      return;
    }

    case OpKind::gather_cols: {
      const Tensor& a = value(n.inputs[0]);
      Tensor da(a.shape());
      for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < n.indices.size(); ++c)
          da.at(r, n.indices[c]) += dy.at(r, c);
      give(n.inputs[0], std::move(da));
      return;
    }

    case OpKind::transpose: {
      const Tensor& a = value(n.inputs[0]);
      Tensor da(a.shape());
      for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) da.at(r, c) = dy.at(c, r);
      give(n.inputs[0], std::move(da));
      return;
    }

    case OpKind::leaky_relu: {
      const Tensor& a = value(n.inputs[0]);
      Tensor da = dy;
      for (std::size_t i = 0; i < da.numel(); ++i) {
        if (a[i] <= 0.0) da[i] *= n.arg0;
      }
      give(n.inputs[0], std::move(da));
      return;
    }

    case OpKind::sigmoid: {
      Tensor da = dy;
      for (std::size_t i = 0; i < da.numel(); ++i)
        da[i] *= n.value[i] * (1.0 - n.value[i]);
      give(n.inputs[0], std::move(da));
      return;
    }

    case OpKind::exp_elem: {
      Tensor da = dy;
      for (std::size_t i = 0; i < da.numel(); ++i) da[i] *= n.value[i];
      give(n.inputs[0], std::move(da));
      return;
    }

    case OpKind::log_elem: {
      const Tensor& a = value(n.inputs[0]);
      Tensor da = dy;
      for (std::size_t i = 0; i < da.numel(); ++i) da[i] /= a[i];
      give(n.inputs[0], std::move(da));
      return;
    }

    case OpKind::clamp: {
      Tensor da = dy;
      for (std::size_t i = 0; i < da.numel(); ++i) {
        const double x = n.saved0[i];
        if (!(x > n.arg0 && x < n.arg1)) da[i] = 0.0;
      }
      give(n.inputs[0], std::move(da));
      return;
    }

    case OpKind::max_pool_rows: {
      const Tensor& a = value(n.inputs[0]);
      Tensor da(a.shape());
      for (std::size_t g = 0; g < n.groups; ++g)
        for (std::size_t c = 0; c < a.cols(); ++c)
          da.at(n.indices[g * a.cols() + c], c) += dy.at(g, c);
      give(n.inputs[0], std::move(da));
      return;
    }

    case OpKind::avg_pool_rows: {
      const Tensor& a = value(n.inputs[0]);
      const std::size_t per = a.rows() / n.groups;
      Tensor da(a.shape());
      for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c)
          da.at(r, c) = dy.at(r / per, c) / static_cast<double>(per);
      give(n.inputs[0], std::move(da));
      return;
    }

    case OpKind::batch_norm: {
      const Tensor& x_hat = n.saved0;
      const Tensor& inv_std = n.saved1;
      const Tensor& g = value(n.inputs[1]);
      const std::size_t rows = x_hat.rows();
      const std::size_t cols = x_hat.cols();

      Tensor dgamma(value(n.inputs[1]).shape());
      Tensor dbeta(value(n.inputs[2]).shape());
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          dgamma[c] += dy.at(r, c) * x_hat.at(r, c);
          dbeta[c] += dy.at(r, c);
        }
      }

      Tensor dx(rows, cols);
      if (mode_ == Mode::training) {
        // Batch statistics depend on x, so the mean terms enter the rule.
        const double inv_rows = 1.0 / static_cast<double>(rows);
        for (std::size_t c = 0; c < cols; ++c) {
          double mean_dy = 0.0, mean_dy_xhat = 0.0;
          for (std::size_t r = 0; r < rows; ++r) {
            mean_dy += dy.at(r, c);
            mean_dy_xhat += dy.at(r, c) * x_hat.at(r, c);
          }
          mean_dy *= inv_rows;
          mean_dy_xhat *= inv_rows;
          for (std::size_t r = 0; r < rows; ++r) {
            dx.at(r, c) = g[c] * inv_std[c] *
                          (dy.at(r, c) - mean_dy -
                           x_hat.at(r, c) * mean_dy_xhat);
          }
        }
      } else {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c)
            dx.at(r, c) = dy.at(r, c) * g[c] * inv_std[c];
      }
      give(n.inputs[0], std::move(dx));
      give(n.inputs[1], std::move(dgamma));
      give(n.inputs[2], std::move(dbeta));
      return;
    }

    case OpKind::l2_norm: {
      const Tensor& a = value(n.inputs[0]);
      const double norm = n.value[0];
      Tensor da(a.shape());
      if (norm >= 1e-12) {
        for (std::size_t i = 0; i < a.numel(); ++i)
          da[i] = dy[0] * a[i] / norm;
      }
      give(n.inputs[0], std::move(da));
      return;
    }

    case OpKind::l2_normalize_rows: {
      const Tensor& a = value(n.inputs[0]);
      Tensor da(a.shape());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        const double norm = n.saved0[r];
        if (norm < 1e-12) continue;
        double y_dot_dy = 0.0;
        for (std::size_t c = 0; c < a.cols(); ++c)
          y_dot_dy += n.value.at(r, c) * dy.at(r, c);
        for (std::size_t c = 0; c < a.cols(); ++c)
          da.at(r, c) = (dy.at(r, c) - n.value.at(r, c) * y_dot_dy) / norm;
      }
      give(n.inputs[0], std::move(da));
      return;
    }

    case OpKind::dot: {
      const Tensor& a = value(n.inputs[0]);
      const Tensor& b = value(n.inputs[1]);
      Tensor da(a.shape()), db(b.shape());
      for (std::size_t i = 0; i < a.numel(); ++i) {
        da[i] = dy[0] * b[i];
        db[i] = dy[0] * a[i];
      }
      give(n.inputs[0], std::move(da));
      give(n.inputs[1], std::move(db));
      return;
    }

    case OpKind::sum_all: {
      const Tensor& a = value(n.inputs[0]);
      Tensor da(a.shape());
      da.fill(dy[0]);
      give(n.inputs[0], std::move(da));
      return;
    }

    case OpKind::mean_all: {
      const Tensor& a = value(n.inputs[0]);
      Tensor da(a.shape());
      da.fill(dy[0] / static_cast<double>(a.numel()));
      give(n.inputs[0], std::move(da));
      return;
    }

    case OpKind::log_sum_exp: {
      Tensor da = n.saved0;
      for (double& v : da.data()) v *= dy[0];
      give(n.inputs[0], std::move(da));
      return;
    }

    case OpKind::nll_softmax: {
      const Tensor& softmax = n.saved0;
      const double scale = dy[0] / static_cast<double>(softmax.rows());
      Tensor da = softmax;
      for (std::size_t r = 0; r < softmax.rows(); ++r)
        da.at(r, n.indices[r]) -= 1.0;
      for (double& v : da.data()) v *= scale;
      give(n.inputs[0], std::move(da));
      return;
    }

    case OpKind::multiclass_hinge: {
      const Tensor& a = value(n.inputs[0]);
      const double scale = dy[0] / static_cast<double>(a.rows());
      Tensor da(a.shape());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        if (n.saved0[r] == 0.0) continue;
        da.at(r, n.indices[2 * r]) += scale;
        da.at(r, n.indices[2 * r + 1]) -= scale;
      }
      give(n.inputs[0], std::move(da));
      return;
    }
  }
}

const Tensor& Graph::grad(Id id) { return ensure_grad(id); }

std::vector<Tensor> Graph::parameter_gradients() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i)
    out.emplace_back(params_.entry(static_cast<int>(i)).value.shape());
  for (const Node& n : nodes_) {
    if (n.op != OpKind::param || !n.grad_ready) continue;
    Tensor& acc = out[static_cast<std::size_t>(n.param_index)];
    for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += n.grad[i];
  }
  return out;
}

}  // namespace scpc::autodiff
