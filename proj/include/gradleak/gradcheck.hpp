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

// Finite-difference verification of the autodiff engine: randomly composed
// small graphs (first order) and the gradient-matching distance of small
// sigmoid models (second order).

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "gradleak/attack.hpp"
#include "gradleak/autodiff.hpp"
#include "gradleak/models.hpp"
#include "gradleak/rng.hpp"

namespace gradleak {

/// |a - f| / max(|a|, |f|, floor). The floor keeps entries that are zero up
/// to rounding from dominating.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Fourth-order central difference of f at offset 0:
/// (8 (f(h) - f(-h)) - (f(2h) - f(-2h))) / 12h.
template <typename F>
double central_difference(F&& f, double h) {
  const double a = f(h), b = f(-h), c = f(2.0 * h), d = f(-2.0 * h);
  return (8.0 * (a - b) - (c - d)) / (12.0 * h);
}

struct GradcheckStats {
  std::size_t cases = 0;
  std::size_t entries = 0;
  double max_rel = 0.0;
  std::string worst;  // description of the worst case
};

namespace detail {

struct RandomGraph {
  Graph g;
  Var out;
  std::vector<Var> leaves;
  std::string ops;
};

// Builds a random chain of 2..6 ops over a [m, n] activation, ending in a
// scalar reduction. Every op of the engine appears with positive probability.
inline void build_random_graph(RandomGraph& rg, Rng& rng) {
  std::uniform_int_distribution<std::size_t> dim(1, 4);
  std::uniform_real_distribution<double> val(-1.0, 1.0);
  auto random_tensor = [&](Shape s, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(s));
    for (double& v : t.storage()) v = u(rng);
    return t;
  };
  Graph& g = rg.g;
  const std::size_t m = dim(rng), k = dim(rng), n = dim(rng) + 1;
  Var a = g.leaf("a", random_tensor({m, k}));
  Var b = g.leaf("b", random_tensor({k, n}));
  rg.leaves = {a, b};
  Var h = g.matmul(a, b);
  rg.ops = "matmul";
  std::size_t extra = 0;
  auto new_leaf = [&](Shape s, double lo = -1.0, double hi = 1.0) {
    Var v = g.leaf("p" + std::to_string(extra++), random_tensor(std::move(s), lo, hi));
    rg.leaves.push_back(v);
    return v;
  };
  std::uniform_int_distribution<int> pick(0, 13);
  std::uniform_int_distribution<int> length(2, 6);
  const int steps = length(rng);
  for (int s = 0; s < steps; ++s) {
    const int op = pick(rng);
    switch (op) {
      case 0: h = g.sigmoid(h); rg.ops += " sigmoid"; break;
      case 1: h = g.exp(g.scalar_mul(h, 0.5)); rg.ops += " exp"; break;
      case 2: h = g.square(h); rg.ops += " square"; break;
      case 3: h = g.log(g.add(g.square(h), g.constant(Tensor({m, n}, 0.5)))); rg.ops += " log"; break;
      case 4: h = g.softmax(h); rg.ops += " softmax"; break;
      case 5: h = g.add(h, g.broadcast(new_leaf({n}), {m, n})); rg.ops += " add+broadcast"; break;
      case 6: h = g.mul(h, new_leaf({m, n})); rg.ops += " mul"; break;
      case 7: h = g.sub(new_leaf({m, n}), h); rg.ops += " sub"; break;
      case 8: h = g.scalar_mul(h, val(rng) * 2.0); rg.ops += " scalar_mul"; break;
      case 9: {
        const bool tb = rng() & 1;
        h = g.matmul(h, new_leaf({n, n}), false, tb);
        rg.ops += tb ? " matmul^T" : " matmul";
        break;
      }
      case 10: {
        Var w = new_leaf({m, n});
        h = g.matmul(g.matmul(h, h, true, false), w, false, true);  // (h^T h) w^T: [n, m]
        h = g.reshape(h, {m, n});
        rg.ops += " gram+reshape";
        break;
      }
      case 11: {
        Var col = g.sum(h, {m, 1});
        h = g.mul(h, g.broadcast(col, {m, n}));
        rg.ops += " sum_keepdim";
        break;
      }
      case 12: {
        Var img = g.reshape(h, {1, 1, m, n});
        Var kern = new_leaf({2, 1, 3, 3});
        Var c = g.conv2d(img, kern, 1);
        h = g.reshape(g.sum(c, {1, 1, m, n}), {m, n});
        rg.ops += " conv2d";
        break;
      }
      default: {
        Var img = g.reshape(h, {1, 1, m, n});
        Var kern = new_leaf({1, 1, 3, 3});
        Var up = g.conv2d(img, kern, 1, ConvMode::kInputGrad);
        Var kg = g.conv2d(img, up, 1, ConvMode::kKernelGrad);
        h = g.add(g.reshape(up, {m, n}), g.broadcast(g.sum(kg), {m, n}));
        rg.ops += " conv_faces";
        break;
      }
    }
    // Keep activations O(1) so products and exp stay well conditioned.
    double peak = 0.0;
    for (double v : h.value().data()) peak = std::max(peak, std::abs(v));
    if (peak > 2.0) h = g.scalar_mul(h, 1.0 / peak);
  }
  switch (rng() % 3) {
    case 0: rg.out = g.sum(g.mul(h, new_leaf({m, n}))); rg.ops += " | sum(h*w)"; break;
    case 1: rg.out = g.mean(g.square(h)); rg.ops += " | mean(h^2)"; break;
    default: rg.out = g.sum(g.sigmoid(h)); rg.ops += " | sum(sigmoid)"; break;
  }
}

}  // namespace detail

/// `count` random graphs; every leaf entry checked against central
/// differences with step h.
inline GradcheckStats check_random_graphs(std::size_t count, std::uint64_t seed, double h = 1e-4) {
  GradcheckStats st;
  for (std::size_t c = 0; c < count; ++c) {
    Rng rng(derive_seed(seed, "gradcheck-graph", c));
    detail::RandomGraph rg;
    detail::build_random_graph(rg, rng);
    Graph& g = rg.g;
    GradResult r = g.grad(rg.out, rg.leaves);
    std::vector<Tensor> analytic;
    for (Var v : r.grads) analytic.push_back(v.value());
    for (std::size_t l = 0; l < rg.leaves.size(); ++l) {
      Tensor base = rg.leaves[l].value();
      for (std::size_t i = 0; i < base.size(); ++i) {
        Tensor t = base;
        const double fd = central_difference(
            [&](double dx) {
              t[i] = base[i] + dx;
              g.set_leaf(rg.leaves[l], t.data());
              g.recompute();
              return rg.out.value().item();
            },
            h);
        g.set_leaf(rg.leaves[l], base.data());
        const double e = relative_error(analytic[l][i], fd);
        ++st.entries;
        if (e > st.max_rel) {
          st.max_rel = e;
          st.worst = "graph " + std::to_string(c) + " [" + rg.ops + "] leaf " + std::to_string(l);
        }
      }
      g.recompute();
    }
    ++st.cases;
  }
  return st;
}

/// dD/d(x', y') of the gradient-matching distance against central
/// differences of D itself, at a random dummy state.
inline GradcheckStats check_distance_second_order(const ModelSpec& spec, std::size_t batch,
                                                  std::uint64_t seed, double h = 1e-4) {
  const ParamSet params = init_params(spec, derive_seed(seed, "params"));
  Rng rng(derive_seed(seed, "state"));
  std::normal_distribution<double> normal(0.0, 1.0);
  // Observed gradients from a random "true" batch.
  Tensor x({batch, spec.input_size()});
  for (double& v : x.storage()) v = normal(rng);
  std::vector<std::size_t> labels(batch);
  for (auto& l : labels) l = rng() % spec.classes;
  const GradSet observed = true_gradients(spec, params, x, one_hot(labels, spec.classes));

  GradientMatching problem(spec, params, observed, batch);
  std::vector<double> state(problem.state_size());
  for (double& v : state) v = normal(rng);
  std::vector<double> grad(state.size());
  problem.evaluate(state, grad);
  GradcheckStats st;
  st.cases = 1;
  std::vector<double> scratch;
  for (std::size_t i = 0; i < state.size(); ++i) {
    const double keep = state[i];
    const double fd = central_difference(
        [&](double dx) {
          state[i] = keep + dx;
          return problem.evaluate(state, scratch);
        },
        h);
    state[i] = keep;
    const double e = relative_error(grad[i], fd);
    ++st.entries;
    if (e > st.max_rel) {
      st.max_rel = e;
      st.worst = std::string(model_kind_name(spec.kind)) + " state entry " + std::to_string(i);
    }
  }
  return st;
}

}  // namespace gradleak
