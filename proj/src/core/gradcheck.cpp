#include "core/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <limits>

#include "core/encoders.hpp"
#include "core/io_util.hpp"
#include "core/rng.hpp"

namespace scpc::autodiff::gradcheck {

namespace {

using encoders::EncoderConfig;

struct Setup {
  ParamStore store;
  std::vector<Tensor> inputs;
  std::size_t n_diff_inputs = 0;
  bool diff_params = false;
  Graph::Mode mode = Graph::Mode::training;
  std::function<Graph::Id(Graph&, const std::vector<Graph::Id>&)> build;
};

struct CheckSpec {
  std::string name;
  std::function<Setup(Rng&)> make;
};

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double lo,
                     double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Magnitudes in [0.1, 1.1] with random sign keep values away from the
// kinks of leaky_relu and friends so central differences stay valid.
Tensor random_signed(Rng& rng, std::vector<std::size_t> shape) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) {
    const double magnitude = rng.uniform(0.1, 1.1);
    v = rng.uniform() < 0.5 ? -magnitude : magnitude;
  }
  return t;
}

double evaluate(const Setup& setup, const ParamStore& store,
                const std::vector<Tensor>& inputs) {
  Graph g(store, setup.mode);
  std::vector<Graph::Id> ids;
  ids.reserve(inputs.size());
  for (const Tensor& t : inputs) ids.push_back(g.input(t));
  return g.value(setup.build(g, ids)).scalar_value();
}

CheckResult run_check(const CheckSpec& spec, const Options& options) {
  CheckResult result;
  result.name = spec.name;
  for (int point = 0; point < options.points; ++point) {
    Rng rng(mix_seed(0x6eadc4ecull, fnv1a64(spec.name),
                     static_cast<std::uint64_t>(point)));
    Setup setup = spec.make(rng);

    Graph g(setup.store, setup.mode);
    if (options.flip_sign_of) g.set_grad_sign_flip(*options.flip_sign_of);
    std::vector<Graph::Id> ids;
    for (const Tensor& t : setup.inputs) ids.push_back(g.input(t));
    const Graph::Id loss = setup.build(g, ids);
    g.backward(loss);

    auto compare = [&](double analytic, double numeric) {
      const double denom =
          std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      result.max_rel_error =
          std::max(result.max_rel_error, std::abs(analytic - numeric) / denom);
    };
    auto central = [&](const ParamStore& store, std::vector<Tensor>& inputs,
                       double& slot) {
      const double saved = slot;
      slot = saved + options.step;
      const double up = evaluate(setup, store, inputs);
      slot = saved - options.step;
      const double down = evaluate(setup, store, inputs);
      slot = saved;
      return (up - down) / (2.0 * options.step);
    };

    for (std::size_t i = 0; i < setup.n_diff_inputs; ++i) {
      const Tensor analytic = g.grad(ids[i]);
      std::vector<Tensor> inputs = setup.inputs;
      for (std::size_t e = 0; e < inputs[i].numel(); ++e)
        compare(analytic[e], central(setup.store, inputs, inputs[i][e]));
    }
    if (setup.diff_params) {
      const std::vector<Tensor> analytic = g.parameter_gradients();
      for (std::size_t p = 0; p < setup.store.size(); ++p) {
        if (!setup.store.entry(static_cast<int>(p)).trainable) continue;
        ParamStore store = setup.store;
        Tensor& value = store.entry(static_cast<int>(p)).value;
        for (std::size_t e = 0; e < value.numel(); ++e)
          compare(analytic[p][e], central(store, setup.inputs, value[e]));
      }
    }
  }
  result.passed = result.max_rel_error < options.tolerance;
  return result;
}

// Scalarize a matrix output against a fixed (non-differentiated) weight leaf.
Graph::Id weighted_sum(Graph& g, Graph::Id out, Graph::Id weights) {
  return g.sum_all(g.mul(out, weights));
}

std::vector<CheckSpec> make_specs() {
  std::vector<CheckSpec> specs;

  auto simple = [&](std::string name, std::size_t n_diff,
                    std::function<Setup(Rng&)> make) {
    specs.push_back({std::move(name), std::move(make)});
    (void)n_diff;
  };

  simple("matmul", 2, [](Rng& rng) {
    Setup s;
    s.inputs = {random_signed(rng, {4, 3}), random_signed(rng, {3, 2}),
                random_signed(rng, {4, 2})};
    s.n_diff_inputs = 2;
    s.build = [](Graph& g, const std::vector<Graph::Id>& in) {
      return weighted_sum(g, g.matmul(in[0], in[1]), in[2]);
    };
    return s;
  });

  simple("add", 2, [](Rng& rng) {
    Setup s;
    s.inputs = {random_signed(rng, {3, 4}), random_signed(rng, {3, 4}),
                random_signed(rng, {3, 4})};
    s.n_diff_inputs = 2;
    s.build = [](Graph& g, const std::vector<Graph::Id>& in) {
      return weighted_sum(g, g.add(in[0], in[1]), in[2]);
    };
    return s;
  });

  simple("add_bias", 2, [](Rng& rng) {
    Setup s;
    s.inputs = {random_signed(rng, {4, 3}), random_signed(rng, {3}),
                random_signed(rng, {4, 3})};
    s.n_diff_inputs = 2;
    s.build = [](Graph& g, const std::vector<Graph::Id>& in) {
      return weighted_sum(g, g.add(in[0], in[1]), in[2]);
    };
    return s;
  });

  simple("sub", 2, [](Rng& rng) {
    Setup s;
    s.inputs = {random_signed(rng, {3, 4}), random_signed(rng, {3, 4}),
                random_signed(rng, {3, 4})};
    s.n_diff_inputs = 2;
    s.build = [](Graph& g, const std::vector<Graph::Id>& in) {
      return weighted_sum(g, g.sub(in[0], in[1]), in[2]);
    };
    return s;
  });

  simple("mul", 2, [](Rng& rng) {
    Setup s;
    s.inputs = {random_signed(rng, {3, 4}), random_signed(rng, {3, 4}),
                random_signed(rng, {3, 4})};
    s.n_diff_inputs = 2;
    s.build = [](Graph& g, const std::vector<Graph::Id>& in) {
      return weighted_sum(g, g.mul(in[0], in[1]), in[2]);
    };
    return s;
  });

  simple("scale_add_const", 1, [](Rng& rng) {
    Setup s;
    s.inputs = {random_signed(rng, {3, 3}), random_signed(rng, {3, 3})};
    s.n_diff_inputs = 1;
    s.build = [](Graph& g, const std::vector<Graph::Id>& in) {
      return weighted_sum(g, g.add_const(g.scale(in[0], 1.7), 0.3), in[1]);
    };
    return s;
  });

  simple("concat_cols", 3, [](Rng& rng) {
    Setup s;
    s.inputs = {random_signed(rng, {3, 2}), random_signed(rng, {3, 3}),
                random_signed(rng, {3, 1}), random_signed(rng, {3, 6})};
    s.n_diff_inputs = 3;
    s.build = [](Graph& g, const std::vector<Graph::Id>& in) {
      return weighted_sum(g, g.concat_cols({in[0], in[1], in[2]}), in[3]);
    };
    return s;
  });

  simple("gather_rows", 1, [](Rng& rng) {
    Setup s;
    s.inputs = {random_signed(rng, {5, 3}), random_signed(rng, {5, 3})};
    s.n_diff_inputs = 1;
    s.build = [](Graph& g, const std::vector<Graph::Id>& in) {
      // Repeated index exercises the scatter-add in the backward rule.
      return weighted_sum(g, g.gather_rows(in[0], {0, 2, 2, 4, 1}), in[1]);
    };
    return s;
  });

  simple("gather_cols", 1, [](Rng& rng) {
    Setup s;
    s.inputs = {random_signed(rng, {3, 5}), random_signed(rng, {3, 4})};
    s.n_diff_inputs = 1;
    s.build = [](Graph& g, const std::vector<Graph::Id>& in) {
      return weighted_sum(g, g.gather_cols(in[0], {4, 0, 2, 2}), in[1]);
    };
    return s;
  });

  simple("transpose", 1, [](Rng& rng) {
    Setup s;
    s.inputs = {random_signed(rng, {3, 4}), random_signed(rng, {4, 3})};
    s.n_diff_inputs = 1;
    s.build = [](Graph& g, const std::vector<Graph::Id>& in) {
      return weighted_sum(g, g.transpose(in[0]), in[1]);
    };
    return s;
  });

  simple("leaky_relu", 1, [](Rng& rng) {
    Setup s;
    s.inputs = {random_signed(rng, {4, 4}), random_signed(rng, {4, 4})};
    s.n_diff_inputs = 1;
    s.build = [](Graph& g, const std::vector<Graph::Id>& in) {
      return weighted_sum(g, g.leaky_relu(in[0], 0.2), in[1]);
    };
    return s;
  });

  simple("sigmoid", 1, [](Rng& rng) {
    Setup s;
    s.inputs = {random_tensor(rng, {3, 3}, -2.0, 2.0),
                random_signed(rng, {3, 3})};
    s.n_diff_inputs = 1;
    s.build = [](Graph& g, const std::vector<Graph::Id>& in) {
      return weighted_sum(g, g.sigmoid(in[0]), in[1]);
    };
    return s;
  });

  simple("exp", 1, [](Rng& rng) {
    Setup s;
    s.inputs = {random_tensor(rng, {3, 3}, -1.0, 1.0),
                random_signed(rng, {3, 3})};
    s.n_diff_inputs = 1;
    s.build = [](Graph& g, const std::vector<Graph::Id>& in) {
      return weighted_sum(g, g.exp_elem(in[0]), in[1]);
    };
    return s;
  });

  simple("log", 1, [](Rng& rng) {
    Setup s;
    s.inputs = {random_tensor(rng, {3, 3}, 0.2, 2.0),
                random_signed(rng, {3, 3})};
    s.n_diff_inputs = 1;
    s.build = [](Graph& g, const std::vector<Graph::Id>& in) {
      return weighted_sum(g, g.log_elem(in[0]), in[1]);
    };
    return s;
  });

  simple("clamp", 1, [](Rng& rng) {
    Setup s;
    Tensor x(3, 3);
    for (double& v : x.data()) {
      do {
        v = rng.uniform(-2.0, 2.0);
      } while (std::abs(v + 0.8) < 0.01 || std::abs(v - 0.9) < 0.01);
    }
    s.inputs = {x, random_signed(rng, {3, 3})};
    s.n_diff_inputs = 1;
    s.build = [](Graph& g, const std::vector<Graph::Id>& in) {
      return weighted_sum(g, g.clamp(in[0], -0.8, 0.9), in[1]);
    };
    return s;
  });

  simple("max_pool_rows", 1, [](Rng& rng) {
    Setup s;
    Tensor x(6, 3);
    // Keep in-group gaps clear of the finite-difference step.
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t group = 0; group < 2; ++group) {
        for (;;) {
          double vals[3];
          for (double& v : vals) v = rng.uniform(-1.0, 1.0);
          const double g01 = std::abs(vals[0] - vals[1]);
          const double g02 = std::abs(vals[0] - vals[2]);
          const double g12 = std::abs(vals[1] - vals[2]);
          if (g01 > 1e-3 && g02 > 1e-3 && g12 > 1e-3) {
            for (std::size_t r = 0; r < 3; ++r)
              x.at(group * 3 + r, c) = vals[r];
            break;
          }
        }
      }
    }
    s.inputs = {x, random_signed(rng, {2, 3})};
    s.n_diff_inputs = 1;
    s.build = [](Graph& g, const std::vector<Graph::Id>& in) {
      return weighted_sum(g, g.max_pool_rows(in[0], 2), in[1]);
    };
    return s;
  });

  simple("avg_pool_rows", 1, [](Rng& rng) {
    Setup s;
    s.inputs = {random_signed(rng, {6, 3}), random_signed(rng, {3, 3})};
    s.n_diff_inputs = 1;
    s.build = [](Graph& g, const std::vector<Graph::Id>& in) {
      return weighted_sum(g, g.avg_pool_rows(in[0], 3), in[1]);
    };
    return s;
  });

  auto batch_norm_setup = [](Rng& rng, Graph::Mode mode) {
    Setup s;
    s.mode = mode;
    s.store.add("bn.running_mean", random_tensor(rng, {4}, -0.5, 0.5),
                /*trainable=*/false);
    s.store.add("bn.running_var", random_tensor(rng, {4}, 0.2, 1.5),
                /*trainable=*/false);
    s.inputs = {random_signed(rng, {8, 4}),
                random_tensor(rng, {4}, 0.5, 1.5),   // gamma
                random_signed(rng, {4}),             // beta
                random_signed(rng, {8, 4})};
    s.n_diff_inputs = 3;
    s.build = [](Graph& g, const std::vector<Graph::Id>& in) {
      return weighted_sum(g, g.batch_norm(in[0], in[1], in[2], 0, 1), in[3]);
    };
    return s;
  };
  specs.push_back({"batch_norm_train", [=](Rng& rng) {
                     return batch_norm_setup(rng, Graph::Mode::training);
                   }});
  specs.push_back({"batch_norm_eval", [=](Rng& rng) {
                     return batch_norm_setup(rng, Graph::Mode::eval);
                   }});

  simple("l2_norm", 1, [](Rng& rng) {
    Setup s;
    s.inputs = {random_signed(rng, {3, 3})};
    s.n_diff_inputs = 1;
    s.build = [](Graph& g, const std::vector<Graph::Id>& in) {
      return g.l2_norm(in[0]);
    };
    return s;
  });

  simple("l2_normalize_rows", 1, [](Rng& rng) {
    Setup s;
    s.inputs = {random_signed(rng, {3, 4}), random_signed(rng, {3, 4})};
    s.n_diff_inputs = 1;
    s.build = [](Graph& g, const std::vector<Graph::Id>& in) {
      return weighted_sum(g, g.l2_normalize_rows(in[0]), in[1]);
    };
    return s;
  });

  simple("dot", 2, [](Rng& rng) {
    Setup s;
    s.inputs = {random_signed(rng, {1, 5}), random_signed(rng, {1, 5})};
    s.n_diff_inputs = 2;
    s.build = [](Graph& g, const std::vector<Graph::Id>& in) {
      return g.dot(in[0], in[1]);
    };
    return s;
  });

  simple("sum_all", 1, [](Rng& rng) {
    Setup s;
    s.inputs = {random_signed(rng, {3, 4})};
    s.n_diff_inputs = 1;
    s.build = [](Graph& g, const std::vector<Graph::Id>& in) {
      return g.sum_all(in[0]);
    };
    return s;
  });

  simple("mean_all", 1, [](Rng& rng) {
    Setup s;
    s.inputs = {random_signed(rng, {3, 4})};
    s.n_diff_inputs = 1;
    s.build = [](Graph& g, const std::vector<Graph::Id>& in) {
      return g.mean_all(in[0]);
    };
    return s;
  });

  simple("log_sum_exp", 1, [](Rng& rng) {
    Setup s;
    s.inputs = {random_tensor(rng, {1, 6}, -2.0, 2.0)};
    s.n_diff_inputs = 1;
    s.build = [](Graph& g, const std::vector<Graph::Id>& in) {
      return g.log_sum_exp(in[0]);
    };
    return s;
  });

  simple("nll_softmax", 1, [](Rng& rng) {
    Setup s;
    s.inputs = {random_tensor(rng, {5, 4}, -2.0, 2.0)};
    s.n_diff_inputs = 1;
    std::vector<std::size_t> labels(5);
    for (auto& l : labels) l = rng.uniform_index(4);
    s.build = [labels](Graph& g, const std::vector<Graph::Id>& in) {
      return g.nll_softmax(in[0], labels);
    };
    return s;
  });

  simple("multiclass_hinge", 1, [](Rng& rng) {
    Setup s;
    Tensor x(5, 4);
    std::vector<std::size_t> labels(5);
    for (std::size_t r = 0; r < 5; ++r) {
      for (;;) {
        double vals[4];
        for (double& v : vals) v = rng.uniform(-2.0, 2.0);
        labels[r] = rng.uniform_index(4);
        // Margin and runner-up gaps clear of the step so the active set and
        // argmax cannot flip under perturbation.
        double best = -1e9, second = -1e9;
        for (std::size_t c = 0; c < 4; ++c) {
          if (c == labels[r]) continue;
          if (vals[c] > best) {
            second = best;
            best = vals[c];
          } else if (vals[c] > second) {
            second = vals[c];
          }
        }
        const double margin = 1.0 + best - vals[labels[r]];
        if (std::abs(margin) > 1e-3 && best - second > 1e-3) {
          for (std::size_t c = 0; c < 4; ++c) x.at(r, c) = vals[c];
          break;
        }
      }
    }
    s.inputs = {x};
    s.n_diff_inputs = 1;
    s.build = [labels](Graph& g, const std::vector<Graph::Id>& in) {
      return g.multiclass_hinge(in[0], labels);
    };
    return s;
  });

  // Composed passes. Static neighbor graphs keep the discrete structure
  // fixed while parameters are perturbed.
  auto encoder_setup = [](Rng& rng, EncoderConfig config, std::size_t points) {
    Setup s;
    Rng init(rng.next_u64());
    const auto handles =
        encoders::make_encoder(s.store, config, "enc", init);
    Tensor coords = random_signed(rng, {points, 3});
    s.inputs = {coords, random_signed(rng, {points, config.output_dim})};
    s.n_diff_inputs = 0;
    s.diff_params = true;
    s.build = [config, handles, coords](Graph& g,
                                        const std::vector<Graph::Id>& in) {
      return weighted_sum(g, encoders::encode(g, coords, config, handles),
                          in[1]);
    };
    return s;
  };
  specs.push_back({"e1_forward", [=](Rng& rng) {
                     EncoderConfig config;
                     config.channel_widths = {4, 4};
                     config.knn_k = 2;
                     config.dynamic_graph = false;
                     config.output_dim = 3;
                     config.concat_layers = false;
                     return encoder_setup(rng, config, 6);
                   }});
  specs.push_back({"e2_forward", [=](Rng& rng) {
                     EncoderConfig config;
                     config.channel_widths = {3, 3, 3};
                     config.knn_k = 2;
                     config.dynamic_graph = false;
                     config.output_dim = 4;
                     config.concat_layers = true;
                     return encoder_setup(rng, config, 6);
                   }});

  specs.push_back({"aggregate", [](Rng& rng) {
    Setup s;
    Rng init(rng.next_u64());
    const auto handles = encoders::make_aggregator(s.store, 4, "agg", init);
    std::vector<geometry::Vec3> coords(5);
    for (auto& p : coords)
      p = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const Tensor adjacency = encoders::gcn_adjacency(coords);
    s.inputs = {random_signed(rng, {5, 4}), random_signed(rng, {1, 4})};
    s.n_diff_inputs = 1;
    s.diff_params = true;
    s.build = [handles, adjacency](Graph& g,
                                   const std::vector<Graph::Id>& in) {
      return weighted_sum(
          g, encoders::aggregate(g, in[0], adjacency, handles), in[1]);
    };
    return s;
  }});

  specs.push_back({"discriminate", [](Rng& rng) {
    Setup s;
    Rng init(rng.next_u64());
    const auto handles = encoders::make_discriminator(s.store, 4, "disc", init);
    s.inputs = {random_signed(rng, {1, 4}), random_signed(rng, {1, 4})};
    s.n_diff_inputs = 2;
    s.diff_params = true;
    s.build = [handles](Graph& g, const std::vector<Graph::Id>& in) {
      return encoders::discriminate(g, in[0], in[1], handles);
    };
    return s;
  }});

  // Contrastive objective end to end: tiny encoder, patch gathers, GCN
  // aggregation, then logsumexp over temperature-scaled dots minus the
  // positive logit. Checks every encoder and aggregator parameter.
  specs.push_back({"info_nce_path", [](Rng& rng) {
    Setup s;
    Rng init(rng.next_u64());
    EncoderConfig config;
    config.channel_widths = {4, 4};
    config.knn_k = 2;
    config.dynamic_graph = false;
    config.output_dim = 3;
    config.concat_layers = true;
    const auto enc = encoders::make_encoder(s.store, config, "enc", init);
    const auto agg = encoders::make_aggregator(s.store, 3, "agg", init);
    const Tensor coords = random_signed(rng, {8, 3});
    std::vector<geometry::Vec3> member_coords(3);
    for (std::size_t i = 0; i < 3; ++i)
      member_coords[i] = {coords.at(i, 0), coords.at(i, 1), coords.at(i, 2)};
    const Tensor adjacency = encoders::gcn_adjacency(member_coords);
    s.diff_params = true;
    s.build = [config, enc, agg, adjacency, coords](
                  Graph& g, const std::vector<Graph::Id>&) {
      const Graph::Id features = encoders::encode(g, coords, config, enc);
      auto patch = [&](std::vector<std::size_t> rows) {
        return encoders::aggregate(g, g.gather_rows(features, rows),
                                   adjacency, agg);
      };
      const Graph::Id anchor = patch({0, 1, 2});
      const Graph::Id positive = patch({1, 2, 3});
      const double inv_tau = 1.0 / 0.5;
      const Graph::Id pos_logit = g.scale(g.dot(anchor, positive), inv_tau);
      std::vector<Graph::Id> logits = {pos_logit};
      for (std::size_t j = 3; j <= 5; j += 2) {
        const Graph::Id negative = patch({j, j + 1, j + 2});
        logits.push_back(g.scale(g.dot(anchor, negative), inv_tau));
      }
      return g.sub(g.log_sum_exp(g.concat_cols(logits)), pos_logit);
    };
    return s;
  }});

  // Pair-discrimination objective: -mean(log D_sim + log(1 - D_dis)).
  specs.push_back({"similarity_loss_path", [](Rng& rng) {
    Setup s;
    Rng init(rng.next_u64());
    const auto disc = encoders::make_discriminator(s.store, 3, "disc", init);
    s.inputs = {random_signed(rng, {1, 3}), random_signed(rng, {1, 3}),
                random_signed(rng, {1, 3}), random_signed(rng, {1, 3})};
    s.n_diff_inputs = 4;
    s.diff_params = true;
    s.build = [disc](Graph& g, const std::vector<Graph::Id>& in) {
      const Graph::Id similar = encoders::discriminate(g, in[0], in[1], disc);
      const Graph::Id dissimilar =
          encoders::discriminate(g, in[2], in[3], disc);
      const double inf = std::numeric_limits<double>::infinity();
      const Graph::Id log_sim = g.log_elem(g.clamp(similar, 1e-12, inf));
      const Graph::Id log_dis = g.log_elem(
          g.clamp(g.add_const(g.scale(dissimilar, -1.0), 1.0), 1e-12, inf));
      return g.scale(g.add(log_sim, log_dis), -0.5);
    };
    return s;
  }});

  return specs;
}

}  // namespace

std::vector<CheckResult> run_all(const Options& options) {
  std::vector<CheckResult> results;
  for (const CheckSpec& spec : make_specs())
    results.push_back(run_check(spec, options));
  return results;
}

bool all_passed(const std::vector<CheckResult>& results) {
  for (const auto& r : results) {
    if (!r.passed) return false;
  }
  return true;
}

std::string render_report(const std::vector<CheckResult>& results) {
  std::string out;
  for (const auto& r : results) {
    out += r.passed ? "PASS" : "FAIL";
    out += "  ";
    out += r.name;
    out += "  max_rel_error=";
    out += format_double(r.max_rel_error, 2);
    out += '\n';
  }
  return out;
}

}  // namespace scpc::autodiff::gradcheck
