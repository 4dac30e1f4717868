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
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gradleak/named_tensors.hpp"

namespace gradleak {

inline constexpr double kDefaultDefendabilityThreshold = 0.05;

enum class Verdict { kLeaked, kDefended };

inline std::string_view verdict_name(Verdict v) {
  return v == Verdict::kLeaked ? "leaked" : "defended";
}

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

/// Mean squared error over all pixels; `recovered` is clamped to [0,1] first.
inline double image_mse(std::span<const double> recovered, std::span<const double> truth) {
  if (recovered.size() != truth.size() || truth.empty()) {
    throw ShapeError("image_mse: sizes differ (" + std::to_string(recovered.size()) + " vs " +
                     std::to_string(truth.size()) + ")");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = clamp01(recovered[i]) - truth[i];
    s += d * d;
  }
  return s / static_cast<double>(truth.size());
}

inline double image_mse(const Tensor& recovered, const Tensor& truth) {
  if (recovered.shape() != truth.shape()) {
    throw ShapeError("image_mse: shape " + shape_str(recovered.shape()) + " vs " +
                     shape_str(truth.shape()));
  }
  return image_mse(recovered.data(), truth.data());
}

struct LayerDistance {
  std::string name;
  double mse = 0.0;  // mean squared difference over the tensor
  double sum = 0.0;  // summed squared difference
  std::size_t count = 0;
};

inline std::vector<LayerDistance> per_layer_distance(const GradSet& dummy, const GradSet& observed) {
  dummy.require_aligned(observed, "per_layer_distance");
  std::vector<LayerDistance> out;
  for (std::size_t i = 0; i < dummy.size(); ++i) {
    LayerDistance d;
    d.name = dummy[i].first;
    d.count = dummy[i].second.size();
    d.sum = squared_distance(dummy[i].second.data(), observed[i].second.data());
    d.mse = d.sum / static_cast<double>(d.count);
    out.push_back(std::move(d));
  }
  return out;
}

/// Summed squared difference over every element of every tensor.
inline double gradient_distance(const GradSet& dummy, const GradSet& observed) {
  dummy.require_aligned(observed, "gradient_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < dummy.size(); ++i) {
    s += squared_distance(dummy[i].second.data(), observed[i].second.data());
  }
  return s;
}

inline double match_tokens(const std::vector<std::size_t>& recovered,
                           const std::vector<std::size_t>& truth) {
  if (recovered.size() != truth.size()) {
    throw ShapeError("match_tokens: lengths differ (" + std::to_string(recovered.size()) + " vs " +
                     std::to_string(truth.size()) + ")");
  }
  if (truth.empty()) return 1.0;
  std::size_t same = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) same += recovered[i] == truth[i];
  return static_cast<double>(same) / static_cast<double>(truth.size());
}

/// Leaked below the threshold, defended at or above it.
inline Verdict judge_defendability(double mse, double threshold = kDefaultDefendabilityThreshold) {
  return mse < threshold ? Verdict::kLeaked : Verdict::kDefended;
}

struct BatchMatch {
  /// permutation[i] = index of the true sample matched to recovered sample i.
  std::vector<std::size_t> permutation;
  std::vector<double> sample_mse;  // per recovered sample, in recovered order
  double mean_mse = 0.0;
};

/// Exact minimum-cost assignment on an n x n row-major cost matrix via
/// subset DP (n <= 20). Returns assignment[i] = column for row i.
inline std::vector<std::size_t> min_cost_assignment(std::span<const double> cost, std::size_t n) {
  if (n > 20) throw Error("assignment of " + std::to_string(n) + " rows is too large");
  if (cost.size() != n * n) throw ShapeError("assignment cost matrix is not n x n");
  // best[mask] = min cost of assigning rows 0..popcount(mask)-1 to columns in mask.
  const std::size_t full = std::size_t{1} << n;
  std::vector<double> best(full, std::numeric_limits<double>::infinity());
  std::vector<std::uint8_t> choice(full, 0);
  best[0] = 0.0;
  for (std::size_t mask = 0; mask < full; ++mask) {
    if (!std::isfinite(best[mask])) continue;
    const std::size_t i = static_cast<std::size_t>(__builtin_popcountll(mask));
    if (i == n) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask & (std::size_t{1} << j)) continue;
      const std::size_t next = mask | (std::size_t{1} << j);
      const double c = best[mask] + cost[i * n + j];
      if (c < best[next]) {
        best[next] = c;
        choice[next] = static_cast<std::uint8_t>(j);
      }
    }
  }
  std::vector<std::size_t> out(n, 0);
  std::size_t mask = full - 1;
  for (std::size_t i = n; i-- > 0;) {
    out[i] = choice[mask];
    mask &= ~(std::size_t{1} << out[i]);
  }
  return out;
}

/// Minimum-total-MSE assignment of recovered samples to true samples.
/// Rows of both tensors are samples.
inline BatchMatch match_batch(const Tensor& recovered, const Tensor& truth) {
  if (recovered.shape() != truth.shape() || truth.rank() < 1) {
    throw ShapeError("match_batch: shape " + shape_str(recovered.shape()) + " vs " +
                     shape_str(truth.shape()));
  }
  const std::size_t n = truth.dim(0);
  if (n > 20) throw Error("match_batch: batch of " + std::to_string(n) + " is too large");
  const std::size_t per = truth.size() / n;
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      cost[i * n + j] = image_mse(recovered.data().subspan(i * per, per),
                                  truth.data().subspan(j * per, per));
  BatchMatch m;
  m.permutation = min_cost_assignment(cost, n);
  m.sample_mse.assign(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    m.sample_mse[i] = cost[i * n + m.permutation[i]];
    total += m.sample_mse[i];
  }
  m.mean_mse = total / static_cast<double>(n);
  return m;
}

struct EvalReport {
  double image_mse = std::numeric_limits<double>::quiet_NaN();  // batch mean after matching
  std::vector<double> sample_mse;
  std::vector<std::size_t> permutation;
  std::vector<LayerDistance> layers;
  double token_match = std::numeric_limits<double>::quiet_NaN();
  double label_accuracy = std::numeric_limits<double>::quiet_NaN();
  Verdict verdict = Verdict::kDefended;
};

}  // namespace gradleak
