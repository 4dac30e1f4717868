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

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <vector>

namespace gradleak {

/// Writes the gradient at x into `grad` and returns the objective value.
/// A non-finite return marks x as infeasible; the line search backs off.
using Objective = std::function<double(std::span<const double> x, std::span<double> grad)>;

struct LbfgsOptions {
  double learning_rate = 1.0;     // initial trial step (scaled by 1/|g|_1 when history is empty)
  std::size_t history = 100;      // curvature pairs kept; 0 = steepest descent
  std::size_t max_iterations = 20;  // iterations per step() call
  double armijo = 1e-4;
  std::size_t max_line_search = 20;  // halvings before giving up
  double tolerance_grad = 0.0;    // stop when max |g| <= this
};

struct LbfgsStepInfo {
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
  std::size_t stalls = 0;  // exhausted line searches (zero step taken)
  double value = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {
inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}
inline double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}
}  // namespace detail

/// Limited-memory BFGS with the two-loop recursion and Armijo backtracking
/// (step halving). The curvature history persists across step() calls, the
/// way an optimizer object is stepped repeatedly by an outer loop.
class Lbfgs {
 public:
  explicit Lbfgs(LbfgsOptions options = {}) : opt_(options) {}

  const LbfgsOptions& options() const { return opt_; }
  std::size_t history_size() const { return pairs_.size(); }
  void reset() { pairs_.clear(); }

  /// Up to options().max_iterations iterations starting from x. On return x
  /// holds the best (last accepted) point.
  LbfgsStepInfo step(const Objective& f, std::vector<double>& x) {
    LbfgsStepInfo info;
    const std::size_t n = x.size();
    std::vector<double> g(n), d(n), trial(n), g_trial(n);
    double fx = f(x, g);
    ++info.evaluations;
    info.value = fx;
    if (!std::isfinite(fx)) return info;

    for (std::size_t it = 0; it < opt_.max_iterations; ++it) {
      if (detail::max_abs(g) <= opt_.tolerance_grad) break;
      direction(g, d);
      double slope = detail::dot(g, d);
      if (!(slope < 0.0)) {
        // Not a descent direction: drop the history and fall back to -g.
        pairs_.clear();
        for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
        slope = detail::dot(g, d);
      }

      double t = opt_.learning_rate;
      if (pairs_.empty()) {
        // Without curvature information -g carries the gradient's scale;
        // shrink the first trial so it moves at most ~lr in l1.
        double l1 = 0.0;
        for (double v : g) l1 += std::abs(v);
        if (l1 > 1.0) t /= l1;
      }
      bool accepted = false;
      double f_trial = 0.0;
      for (std::size_t ls = 0; ls <= opt_.max_line_search; ++ls) {
        for (std::size_t i = 0; i < n; ++i) trial[i] = x[i] + t * d[i];
        f_trial = f(trial, g_trial);
        ++info.evaluations;
        if (std::isfinite(f_trial) && f_trial <= fx + opt_.armijo * t * slope) {
          accepted = true;
          break;
        }
        t *= 0.5;
      }
      ++info.iterations;
      if (!accepted) {
        ++info.stalls;
        pairs_.clear();
        break;
      }

      Pair p{std::vector<double>(n), std::vector<double>(n), 0.0};
      for (std::size_t i = 0; i < n; ++i) {
        p.s[i] = trial[i] - x[i];
        p.y[i] = g_trial[i] - g[i];
      }
      const double sy = detail::dot(p.s, p.y);
      if (opt_.history > 0 && sy > 1e-300) {
        p.rho = 1.0 / sy;
        pairs_.push_back(std::move(p));
        if (pairs_.size() > opt_.history) pairs_.pop_front();
      }
      const bool moved = f_trial < fx || trial != x;
      x.swap(trial);
      g.swap(g_trial);
      fx = f_trial;
      info.value = fx;
      if (!moved) break;
    }
    return info;
  }

 private:
  struct Pair {
    std::vector<double> s;
    std::vector<double> y;
    double rho;
  };

  // d = -H g via the two-loop recursion.
  void direction(std::span<const double> g, std::span<double> d) const {
    const std::size_t n = g.size();
    std::copy(g.begin(), g.end(), d.begin());
    std::vector<double> alpha(pairs_.size());
    for (std::size_t k = pairs_.size(); k-- > 0;) {
      const Pair& p = pairs_[k];
      alpha[k] = p.rho * detail::dot(p.s, d);
      for (std::size_t i = 0; i < n; ++i) d[i] -= alpha[k] * p.y[i];
    }
    if (!pairs_.empty()) {
      const Pair& last = pairs_.back();
      const double gamma = 1.0 / (last.rho * detail::dot(last.y, last.y));
      for (double& v : d) v *= gamma;
    }
    for (std::size_t k = 0; k < pairs_.size(); ++k) {
      const Pair& p = pairs_[k];
      const double beta = p.rho * detail::dot(p.y, d);
      for (std::size_t i = 0; i < n; ++i) d[i] += p.s[i] * (alpha[k] - beta);
    }
    for (double& v : d) v = -v;
  }

  LbfgsOptions opt_;
  std::deque<Pair> pairs_;
};

struct MinimizeResult {
  std::vector<double> x;
  double value = 0.0;
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
  std::size_t stalls = 0;
};

/// Plain L-BFGS minimization: `max_iterations` total iterations, stopping
/// early once the gradient vanishes or the line search stalls.
inline MinimizeResult lbfgs_minimize(const Objective& f, std::vector<double> x0,
                                     LbfgsOptions options) {
  Lbfgs opt(options);
  MinimizeResult r;
  r.x = std::move(x0);
  LbfgsStepInfo info = opt.step(f, r.x);
  r.value = info.value;
  r.iterations = info.iterations;
  r.evaluations = info.evaluations;
  r.stalls = info.stalls;
  return r;
}

}  // namespace gradleak
