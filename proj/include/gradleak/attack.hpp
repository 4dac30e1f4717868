/*
 * Copyright 2026 The gradleak Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Gradient-matching reconstruction: dummy inputs x' and label logits y' are
// optimized so that the gradient they induce on the shared model matches an
// observed gradient. Differentiating the gradient distance w.r.t. x' and y'
// is a second pass through the autodiff graph.

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gradleak/autodiff.hpp"
#include "gradleak/lbfgs.hpp"
#include "gradleak/metrics.hpp"
#include "gradleak/models.hpp"
#include "gradleak/rng.hpp"

namespace gradleak {

enum class AttackOptimizer { kLbfgs, kGd };

struct AttackConfig {
  AttackOptimizer optimizer = AttackOptimizer::kLbfgs;
  std::size_t iterations = 300;   // outer attack iterations
  double learning_rate = 1.0;
  std::size_t history = 100;      // L-BFGS curvature pairs
  std::size_t max_inner = 20;     // L-BFGS iterations per attack iteration
  std::uint64_t seed = 0;
  double epsilon = 1e-8;          // converged once D < epsilon

  void validate() const {
    if (iterations < 1) throw Error("attack: iterations must be >= 1");
    if (!(learning_rate > 0.0)) throw Error("attack: learning rate must be positive");
    if (optimizer == AttackOptimizer::kLbfgs && history < 1) {
      throw Error("attack: L-BFGS history must be >= 1");
    }
  }
};

struct TraceRecord {
  std::size_t iteration = 0;
  double distance = 0.0;
  std::vector<LayerDistance> layers;
  std::optional<double> probe;  // e.g. reconstruction MSE against ground truth
  std::vector<std::size_t> labels;
  double seconds = 0.0;
};

struct AttackTrace {
  std::vector<TraceRecord> records;
  std::size_t stalls = 0;
  std::size_t evaluations = 0;
};

struct AttackResult {
  Tensor x;              // recovered inputs [N, input_size]
  Tensor label_logits;   // [N, classes]
  std::vector<std::size_t> labels;
  double distance = std::numeric_limits<double>::infinity();
  std::size_t best_iteration = 0;
  AttackTrace trace;
  bool converged = false;
  std::string error;     // set when the run aborted
};

/// Optional hooks: a fixed starting point and a per-iteration probe.
struct AttackOptions {
  std::optional<Tensor> init_x;
  std::optional<Tensor> init_label_logits;
  std::function<double(const Tensor& x)> probe;
  /// Multiplies both the dummy and the observed gradients before matching.
  double gradient_scale = 1.0;
  /// Record per-layer distances in the trace (costs one copy per iteration).
  bool trace_layers = true;
};

/// D = sum over tensors of ||dummy - observed||^2, as a graph expression.
inline Var gradient_distance(std::span<const Var> dummy, const GradSet& observed) {
  if (dummy.size() != observed.size()) throw ShapeError("gradient_distance: tensor counts differ");
  if (dummy.empty()) throw ShapeError("gradient_distance: empty gradient set");
  Graph& g = *dummy[0].graph();
  Var total;
  for (std::size_t i = 0; i < dummy.size(); ++i) {
    if (dummy[i].shape() != observed[i].second.shape()) {
      throw ShapeError("gradient_distance: shape mismatch for '" + observed[i].first + "'");
    }
    Var term = g.sum(g.square(g.sub(dummy[i], g.constant(observed[i].second))));
    total = total.valid() ? g.add(total, term) : term;
  }
  return total;
}

/// Argmax per row, ties to the lowest index.
inline std::vector<std::size_t> recover_labels(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("recover_labels needs [N, C] logits");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::vector<std::size_t> out(n, 0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 1; k < c; ++k) {
      if (logits[r * c + k] > logits[r * c + out[r]]) out[r] = k;
    }
  }
  return out;
}

/// Nearest embedding row (Euclidean) per position, ties to the lowest id.
/// `embedded` holds positions as consecutive blocks of embed_dim values.
inline std::vector<std::size_t> recover_tokens(std::span<const double> embedded,
                                               const Tensor& embedding_matrix) {
  if (embedding_matrix.rank() != 2) throw ShapeError("embedding matrix must be [V, E]");
  const std::size_t vocab = embedding_matrix.dim(0), dim = embedding_matrix.dim(1);
  if (embedded.size() % dim != 0) {
    throw ShapeError("embedded size " + std::to_string(embedded.size()) +
                     " is not a multiple of the embedding dim " + std::to_string(dim));
  }
  std::vector<std::size_t> out(embedded.size() / dim, 0);
  for (std::size_t p = 0; p < out.size(); ++p) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < vocab; ++v) {
      const double d = squared_distance(embedded.subspan(p * dim, dim),
                                        embedding_matrix.data().subspan(v * dim, dim));
      if (d < best) {
        best = d;
        out[p] = v;
      }
    }
  }
  return out;
}

/// The attacker's objective: D(x', y') and its gradient w.r.t. (x', y').
/// State layout is [x' (N * input_size), y' logits (N * classes)].
class GradientMatching {
 public:
  GradientMatching(const ModelSpec& spec, const ParamSet& params, const GradSet& observed,
                   std::size_t batch, double gradient_scale = 1.0)
      : spec_(spec), batch_(batch), graph_(std::make_unique<Graph>()) {
    if (batch < 1) throw Error("attack: batch size must be >= 1");
    if (!(gradient_scale > 0.0)) throw Error("attack: gradient scale must be positive");
    const auto layout = param_layout(spec);
    params.require_aligned(init_params_shapes(layout), "attack parameters");
    Graph& g = *graph_;
    x_ = g.leaf("dummy.x", Tensor({batch, spec.input_size()}));
    y_ = g.leaf("dummy.y", Tensor({batch, spec.classes}));
    std::vector<Var> all;
    std::vector<Var> matched;
    for (std::size_t i = 0; i < layout.size(); ++i) {
      Var w = g.leaf(params[i].first, params[i].second);
      all.push_back(w);
      if (is_input_side_param(params[i].first)) continue;
      matched.push_back(w);
      if (!observed.contains(params[i].first)) {
        throw Error("observed gradients lack '" + params[i].first + "'");
      }
      const Tensor& obs = observed.at(params[i].first);
      if (obs.shape() != params[i].second.shape()) {
        throw ShapeError("observed gradient '" + params[i].first + "' has shape " +
                         shape_str(obs.shape()));
      }
      Tensor scaled = obs;
      for (double& v : scaled.storage()) v *= gradient_scale;
      observed_.insert(params[i].first, std::move(scaled));
    }
    Var loss = soft_cross_entropy(build_logits(spec, all, x_), g.softmax(y_));
    GradResult dummy = g.grad(loss, matched);
    for (Var d : dummy.grads) {
      dummy_.push_back(gradient_scale == 1.0 ? d : g.scalar_mul(d, gradient_scale));
    }
    distance_ = gradient_distance(dummy_, observed_);
    GradResult second = g.grad(distance_, {x_, y_});
    dx_ = second.grads[0];
    dy_ = second.grads[1];
  }

  std::size_t batch() const { return batch_; }
  std::size_t state_size() const { return batch_ * (spec_.input_size() + spec_.classes); }
  std::size_t x_size() const { return batch_ * spec_.input_size(); }
  const GradSet& observed() const { return observed_; }
  Graph& graph() { return *graph_; }
  Var distance_node() const { return distance_; }

  /// Sets the dummy state, evaluates D, writes dD/dstate into `grad` (if
  /// non-empty) and returns D.
  double evaluate(std::span<const double> state, std::span<double> grad) {
    const std::size_t nx = x_size();
    graph_->set_leaf(x_, state.subspan(0, nx));
    graph_->set_leaf(y_, state.subspan(nx));
    graph_->recompute();
    if (!grad.empty()) {
      const auto gx = dx_.value().data();
      const auto gy = dy_.value().data();
      std::copy(gx.begin(), gx.end(), grad.begin());
      std::copy(gy.begin(), gy.end(), grad.begin() + static_cast<std::ptrdiff_t>(nx));
    }
    return distance_.value().item();
  }

  /// Dummy gradients at the last evaluated state.
  GradSet dummy_gradients() const {
    GradSet out;
    for (std::size_t i = 0; i < dummy_.size(); ++i) out.insert(observed_[i].first, dummy_[i].value());
    return out;
  }

 private:
  static ParamSet init_params_shapes(const std::vector<ParamShape>& layout) {
    ParamSet shapes;
    for (const auto& p : layout) shapes.insert(p.name, Tensor(p.shape));
    return shapes;
  }

  ModelSpec spec_;
  std::size_t batch_;
  std::unique_ptr<Graph> graph_;
  Var x_, y_, distance_, dx_, dy_;
  std::vector<Var> dummy_;
  GradSet observed_;
};

namespace detail {

inline AttackResult run_attack(const ModelSpec& spec, const ParamSet& params,
                               const GradSet& observed, std::size_t batch,
                               const AttackConfig& config, bool cyclic,
                               const AttackOptions& options) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  GradientMatching problem(spec, params, observed, batch, options.gradient_scale);
  const std::size_t nx = problem.x_size();
  const std::size_t per_x = spec.input_size();
  const std::size_t per_y = spec.classes;

  std::vector<double> state(problem.state_size());
  {
    Rng rng(derive_seed(config.seed, "dummy"));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : state) v = normal(rng);
  }
  if (options.init_x) {
    if (options.init_x->size() != nx) throw ShapeError("attack: init_x has the wrong size");
    std::copy(options.init_x->data().begin(), options.init_x->data().end(), state.begin());
  }
  if (options.init_label_logits) {
    if (options.init_label_logits->size() != state.size() - nx) {
      throw ShapeError("attack: init_label_logits has the wrong size");
    }
    std::copy(options.init_label_logits->data().begin(), options.init_label_logits->data().end(),
              state.begin() + static_cast<std::ptrdiff_t>(nx));
  }

  // Index sets of the variables each block updates.
  std::vector<std::vector<std::size_t>> blocks;
  if (cyclic) {
    for (std::size_t s = 0; s < batch; ++s) {
      std::vector<std::size_t> idx;
      for (std::size_t k = 0; k < per_x; ++k) idx.push_back(s * per_x + k);
      for (std::size_t k = 0; k < per_y; ++k) idx.push_back(nx + s * per_y + k);
      blocks.push_back(std::move(idx));
    }
  } else {
    std::vector<std::size_t> idx(state.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    blocks.push_back(std::move(idx));
  }

  LbfgsOptions lopt;
  lopt.learning_rate = config.learning_rate;
  lopt.history = config.history;
  lopt.max_iterations = config.max_inner;
  std::vector<Lbfgs> optimizers(blocks.size(), Lbfgs(lopt));

  AttackResult result;
  std::vector<double> full_grad(state.size());
  std::vector<double> best_state = state;

  auto split = [&](const std::vector<double>& s, Tensor& x, Tensor& y) {
    x = Tensor({batch, per_x}, std::vector<double>(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(nx)));
    y = Tensor({batch, per_y}, std::vector<double>(s.begin() + static_cast<std::ptrdiff_t>(nx), s.end()));
  };

  auto record = [&](std::size_t iteration, double d) {
    TraceRecord rec;
    rec.iteration = iteration;
    rec.distance = d;
    if (options.trace_layers) rec.layers = per_layer_distance(problem.dummy_gradients(), problem.observed());
    Tensor x, y;
    split(state, x, y);
    rec.labels = recover_labels(y);
    if (options.probe) rec.probe = options.probe(x);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.trace.records.push_back(std::move(rec));
    if (d < result.distance) {
      result.distance = d;
      result.best_iteration = iteration;
      best_state = state;
    }
  };

  auto finish = [&]() {
    split(best_state, result.x, result.label_logits);
    result.labels = recover_labels(result.label_logits);
    result.converged = result.distance < config.epsilon;
    return result;
  };

  double d = 0.0;
  try {
    d = problem.evaluate(state, full_grad);
    ++result.trace.evaluations;
  } catch (const NonFiniteError& e) {
    result.error = e.what();
    result.best_iteration = 0;
    best_state = state;
    return finish();
  }
  record(0, d);
  if (d < config.epsilon) return finish();

  std::vector<double> sub;
  std::vector<double> sub_grad;
  for (std::size_t it = 1; it <= config.iterations; ++it) {
    const auto& idx = blocks[(it - 1) % blocks.size()];
    sub.resize(idx.size());
    sub_grad.resize(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) sub[k] = state[idx[k]];

    std::vector<double> trial = state;
    Objective restricted = [&](std::span<const double> xs, std::span<double> gs) {
      for (std::size_t k = 0; k < idx.size(); ++k) trial[idx[k]] = xs[k];
      ++result.trace.evaluations;
      double value;
      try {
        value = problem.evaluate(trial, full_grad);
      } catch (const NonFiniteError&) {
        return std::numeric_limits<double>::infinity();
      }
      for (std::size_t k = 0; k < idx.size(); ++k) gs[k] = full_grad[idx[k]];
      return value;
    };

    if (config.optimizer == AttackOptimizer::kLbfgs) {
      const LbfgsStepInfo info = optimizers[(it - 1) % blocks.size()].step(restricted, sub);
      result.trace.stalls += info.stalls;
    } else {
      const double v = restricted(sub, sub_grad);
      if (!std::isfinite(v)) {
        result.error = "non-finite gradient distance at iteration " + std::to_string(it);
        return finish();
      }
      for (std::size_t k = 0; k < idx.size(); ++k) sub[k] -= config.learning_rate * sub_grad[k];
    }
    for (std::size_t k = 0; k < idx.size(); ++k) state[idx[k]] = sub[k];

    try {
      d = problem.evaluate(state, full_grad);
      ++result.trace.evaluations;
    } catch (const NonFiniteError& e) {
      result.error = std::string(e.what()) + " at iteration " + std::to_string(it);
      return finish();
    }
    record(it, d);
    if (d < config.epsilon) break;
  }
  return finish();
}

}  // namespace detail

/// Joint update of the whole dummy batch each iteration.
inline AttackResult dlg_attack(const ModelSpec& spec, const ParamSet& params,
                               const GradSet& observed, std::size_t batch,
                               const AttackConfig& config, const AttackOptions& options = {}) {
  return detail::run_attack(spec, params, observed, batch, config, false, options);
}

/// Cyclic variant: iteration i updates only sample (i - 1) mod N, each sample
/// keeping its own L-BFGS history.
inline AttackResult dlg_attack_batched(const ModelSpec& spec, const ParamSet& params,
                                       const GradSet& observed, std::size_t batch,
                                       const AttackConfig& config,
                                       const AttackOptions& options = {}) {
  return detail::run_attack(spec, params, observed, batch, config, true, options);
}

}  // namespace gradleak
