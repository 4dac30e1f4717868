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

// In-process synchronous SGD: every worker computes a gradient on the same
// weights, the gradients are averaged, and every worker applies the average.

#include <functional>
#include <set>
#include <string>
#include <vector>

#include "gradleak/models.hpp"

namespace gradleak {

enum class Topology { kCentralized, kRing };

inline std::string_view topology_name(Topology t) { return t == Topology::kRing ? "ring" : "centralized"; }

inline Topology parse_topology(const std::string& s) {
  if (s == "centralized") return Topology::kCentralized;
  if (s == "ring") return Topology::kRing;
  throw Error("unknown topology '" + s + "'");
}

struct Worker {
  ParamSet params;
  Batch batch;                                     // image models
  std::vector<std::vector<std::size_t>> sentences;  // embed classifier (labels in batch.y)
};

/// What a worker shares: its true gradient, or a transformed one.
using ShareFn = std::function<GradSet(std::size_t worker, const GradSet& true_grad)>;

struct RoundObservation {
  std::vector<GradSet> shared;          // every worker's shared gradient, by worker index
  GradSet average;                      // (1/n) sum of shared
  std::vector<std::size_t> observed;    // worker indices visible to the attacker
};

inline GradSet worker_gradient(const ModelSpec& spec, const Worker& w) {
  if (spec.kind == ModelKind::kEmbedClassifier) return true_gradients(spec, w.params, w.sentences, w.batch.y);
  return true_gradients(spec, w.params, w.batch.x, w.batch.y);
}

inline GradSet average_gradients(const std::vector<GradSet>& grads) {
  if (grads.empty()) throw Error("average of zero gradient sets");
  GradSet avg = grads.front();
  for (std::size_t k = 1; k < grads.size(); ++k) {
    avg.require_aligned(grads[k], "gradient average");
    for (std::size_t i = 0; i < avg.size(); ++i)
      for (std::size_t j = 0; j < avg[i].second.size(); ++j) avg[i].second[j] += grads[k][i].second[j];
  }
  const double inv = 1.0 / static_cast<double>(grads.size());
  for (auto& [name, t] : avg)
    for (double& v : t.storage()) v *= inv;
  return avg;
}

/// Throws unless every worker holds bit-identical weights.
inline void require_synchronized(const std::vector<Worker>& workers) {
  for (std::size_t k = 1; k < workers.size(); ++k) {
    if (!(workers[k].params == workers[0].params)) {
      throw Error("worker " + std::to_string(k) + " weights diverged from worker 0");
    }
  }
}

/// One synchronous round. Centralized: the server sees every worker's shared
/// gradient. Ring: the attacker at node `attacker` sees its two neighbours.
/// With lr > 0 every worker then applies the averaged gradient.
inline RoundObservation simulate_round(const ModelSpec& spec, std::vector<Worker>& workers,
                                       Topology topology, std::size_t attacker = 0, double lr = 0.0,
                                       const ShareFn& share = {}) {
  if (workers.empty()) throw Error("simulate_round: no workers");
  require_synchronized(workers);
  const std::size_t n = workers.size();
  RoundObservation r;
  for (std::size_t k = 0; k < n; ++k) {
    GradSet g = worker_gradient(spec, workers[k]);
    r.shared.push_back(share ? share(k, g) : std::move(g));
  }
  r.average = average_gradients(r.shared);
  if (topology == Topology::kCentralized) {
    for (std::size_t k = 0; k < n; ++k) r.observed.push_back(k);
  } else {
    if (attacker >= n) throw Error("ring attacker node " + std::to_string(attacker) + " out of range");
    std::set<std::size_t> nb;
    if (n > 1) {
      nb.insert((attacker + 1) % n);
      nb.insert((attacker + n - 1) % n);
    }
    r.observed.assign(nb.begin(), nb.end());
  }
  if (lr > 0.0) {
    for (auto& w : workers) w.params = sgd_step(w.params, r.average, lr);
    require_synchronized(workers);
  }
  return r;
}

}  // namespace gradleak
