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

// Gradient transformations an honest worker can apply before sharing:
// additive noise, low-precision round trips, magnitude pruning, and
// multi-step local accumulation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "gradleak/models.hpp"
#include "gradleak/rng.hpp"

namespace gradleak {

enum class DefenseKind { kNone, kGaussian, kLaplacian, kFp16, kBf16, kInt8, kPrune, kAccumulate };

inline std::string_view defense_kind_name(DefenseKind k) {
  switch (k) {
    case DefenseKind::kNone: return "none";
    case DefenseKind::kGaussian: return "gaussian";
    case DefenseKind::kLaplacian: return "laplacian";
    case DefenseKind::kFp16: return "fp16";
    case DefenseKind::kBf16: return "bf16";
    case DefenseKind::kInt8: return "int8";
    case DefenseKind::kPrune: return "prune";
    case DefenseKind::kAccumulate: return "accumulate";
  }
  return "?";
}

inline DefenseKind parse_defense_kind(const std::string& s) {
  for (DefenseKind k : {DefenseKind::kNone, DefenseKind::kGaussian, DefenseKind::kLaplacian,
                        DefenseKind::kFp16, DefenseKind::kBf16, DefenseKind::kInt8,
                        DefenseKind::kPrune, DefenseKind::kAccumulate}) {
    if (s == defense_kind_name(k)) return k;
  }
  throw Error("unknown defense kind '" + s + "'");
}

struct DefenseSpec {
  DefenseKind kind = DefenseKind::kNone;
  double variance = 1e-3;     // gaussian / laplacian
  double sparsity = 0.2;      // prune
  bool per_layer = false;     // prune each tensor separately
  std::size_t local_steps = 1;  // accumulate
  double local_lr = 0.1;        // accumulate
  std::uint64_t seed = 0;

  void validate() const {
    switch (kind) {
      case DefenseKind::kGaussian:
      case DefenseKind::kLaplacian:
        if (!(variance > 0.0)) throw Error("defense: noise variance must be > 0");
        break;
      case DefenseKind::kPrune:
        if (!(sparsity >= 0.0 && sparsity < 1.0)) throw Error("defense: sparsity must be in [0, 1)");
        break;
      case DefenseKind::kAccumulate:
        if (local_steps < 1) throw Error("defense: local steps must be >= 1");
        if (!(local_lr > 0.0)) throw Error("defense: local learning rate must be > 0");
        break;
      default:
        break;
    }
  }
};

enum class NoiseKind { kGaussian, kLaplacian };

/// i.i.d. zero-mean noise of variance `variance` on every element.
/// Gaussian std = sqrt(v); Laplacian scale b = sqrt(v / 2).
inline GradSet add_noise(const GradSet& grads, NoiseKind kind, double variance, std::uint64_t seed) {
  if (!(variance > 0.0)) throw Error("add_noise: variance must be > 0");
  Rng rng(derive_seed(seed, "noise"));
  GradSet out = grads;
  if (kind == NoiseKind::kGaussian) {
    std::normal_distribution<double> normal(0.0, std::sqrt(variance));
    for (auto& [name, t] : out)
      for (double& v : t.storage()) v += normal(rng);
  } else {
    const double b = std::sqrt(variance / 2.0);
    std::uniform_real_distribution<double> uniform(-0.5, 0.5);
    for (auto& [name, t] : out)
      for (double& v : t.storage()) {
        // Inverse CDF; |u| < 0.5 keeps the log argument positive.
        double u = uniform(rng);
        while (u == -0.5) u = uniform(rng);
        v += -b * std::copysign(1.0, u) * std::log1p(-2.0 * std::abs(u));
      }
  }
  return out;
}

enum class QuantFormat { kFp16, kBf16, kInt8 };

struct FloatFormat {
  int mantissa_bits;
  int min_normal_exp;
  double max_finite;
};

inline constexpr FloatFormat kFp16Format{10, -14, 65504.0};
inline constexpr FloatFormat kBf16Format{7, -126, 3.3895313892515355e38};  // (2 - 2^-7) * 2^127

/// Round-to-nearest-even of a double onto a binary float format (subnormals
/// included), returned as a double. Overflow saturates to +-max_finite and
/// bumps `*overflow`.
inline double round_to_format(double v, const FloatFormat& f, std::size_t* overflow = nullptr) {
  if (v == 0.0 || !std::isfinite(v)) return v;
  const double a = std::abs(v);
  const int e = std::max(std::ilogb(a), f.min_normal_exp);
  const double quantum = std::ldexp(1.0, e - f.mantissa_bits);
  double r = std::nearbyint(a / quantum) * quantum;  // ties-to-even under the default mode
  if (r > f.max_finite) {
    r = f.max_finite;
    if (overflow) ++*overflow;
  }
  return std::copysign(r, v);
}

struct QuantizeStats {
  std::size_t overflows = 0;
};

/// Round trip of every element through fp16, bf16, or symmetric per-tensor
/// int8 (scale = max|g| / 127, zero point 0).
inline GradSet quantize(const GradSet& grads, QuantFormat format, QuantizeStats* stats = nullptr) {
  GradSet out = grads;
  std::size_t overflow = 0;
  for (auto& [name, t] : out) {
    if (format == QuantFormat::kInt8) {
      double peak = 0.0;
      for (double v : t.data()) peak = std::max(peak, std::abs(v));
      if (peak == 0.0) continue;
      const double scale = peak / 127.0;
      for (double& v : t.storage()) {
        const double q = std::clamp(std::nearbyint(v / scale), -127.0, 127.0);
        v = q * scale;
      }
    } else {
      const FloatFormat& f = format == QuantFormat::kFp16 ? kFp16Format : kBf16Format;
      for (double& v : t.storage()) v = round_to_format(v, f, &overflow);
    }
  }
  if (stats) stats->overflows += overflow;
  return out;
}

/// Zeroes the floor(s * total) smallest-magnitude elements, ranked globally
/// across all tensors (or within each tensor when per_layer). Ties go to the
/// earlier tensor, then the lower element index.
inline GradSet prune_small(const GradSet& grads, double sparsity, bool per_layer = false) {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) throw Error("prune_small: sparsity must be in [0, 1)");
  GradSet out = grads;
  auto prune_group = [&](std::vector<std::pair<std::size_t, std::size_t>>& refs) {
    const std::size_t k = static_cast<std::size_t>(std::floor(sparsity * static_cast<double>(refs.size())));
    if (k == 0) return;
    auto mag = [&](const std::pair<std::size_t, std::size_t>& r) {
      return std::abs(out[r.first].second[r.second]);
    };
    std::stable_sort(refs.begin(), refs.end(),
                     [&](const auto& a, const auto& b) { return mag(a) < mag(b); });
    for (std::size_t i = 0; i < k; ++i) out[refs[i].first].second[refs[i].second] = 0.0;
  };
  std::vector<std::pair<std::size_t, std::size_t>> refs;
  for (std::size_t t = 0; t < out.size(); ++t) {
    for (std::size_t i = 0; i < out[t].second.size(); ++i) refs.emplace_back(t, i);
    if (per_layer) {
      prune_group(refs);
      refs.clear();
    }
  }
  if (!per_layer) prune_group(refs);
  return out;
}

struct AccumulationResult {
  GradSet effective;  // (W_before - W_after) / (k * lr)
  ParamSet final_params;
};

/// k sequential local SGD steps, step i on shard[i mod shard.size()]. Only
/// the effective gradient leaves the worker.
inline AccumulationResult accumulate_local(const ModelSpec& spec, const ParamSet& params,
                                           const std::vector<Batch>& shard, std::size_t k,
                                           double lr) {
  if (k < 1) throw Error("accumulate_local: k must be >= 1");
  if (!(lr > 0.0)) throw Error("accumulate_local: learning rate must be > 0");
  if (shard.empty()) throw Error("accumulate_local: empty data shard");
  ParamSet w = params;
  AccumulationResult r;
  for (std::size_t step = 0; step < k; ++step) {
    const Batch& b = shard[step % shard.size()];
    GradSet g = true_gradients(spec, w, b.x, b.y);
    w = sgd_step(w, g, lr);
    if (k == 1) r.effective = std::move(g);  // the quotient below is g up to rounding
  }
  if (k == 1) {
    r.final_params = std::move(w);
    return r;
  }
  const double denom = static_cast<double>(k) * lr;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor g(params[i].second.shape());
    for (std::size_t j = 0; j < g.size(); ++j) {
      g[j] = (params[i].second[j] - w[i].second[j]) / denom;
    }
    r.effective.insert(params[i].first, std::move(g));
  }
  r.final_params = std::move(w);
  return r;
}

/// Applies a gradient-level defense. kAccumulate needs model and data and is
/// handled by accumulate_local instead.
inline GradSet apply_defense(const GradSet& grads, const DefenseSpec& spec,
                             QuantizeStats* stats = nullptr) {
  spec.validate();
  switch (spec.kind) {
    case DefenseKind::kNone:
      return grads;
    case DefenseKind::kGaussian:
      return add_noise(grads, NoiseKind::kGaussian, spec.variance, spec.seed);
    case DefenseKind::kLaplacian:
      return add_noise(grads, NoiseKind::kLaplacian, spec.variance, spec.seed);
    case DefenseKind::kFp16:
      return quantize(grads, QuantFormat::kFp16, stats);
    case DefenseKind::kBf16:
      return quantize(grads, QuantFormat::kBf16, stats);
    case DefenseKind::kInt8:
      return quantize(grads, QuantFormat::kInt8, stats);
    case DefenseKind::kPrune:
      return prune_small(grads, spec.sparsity, spec.per_layer);
    case DefenseKind::kAccumulate:
      throw Error("apply_defense: accumulate is applied during local training");
  }
  return grads;
}

}  // namespace gradleak
