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

// End-to-end runs: build the workers, train for a while, let the attacker
// observe one round, attack offline, and score the reconstruction. Sweeps
// fan a base configuration out over its axes and stream one CSV row per run.

#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "gradleak/attack.hpp"
#include "gradleak/checkpoint.hpp"
#include "gradleak/defenses.hpp"
#include "gradleak/harness/config.hpp"
#include "gradleak/harness/dataset.hpp"
#include "gradleak/harness/federation.hpp"
#include "gradleak/harness/image_io.hpp"
#include "gradleak/metrics.hpp"

namespace gradleak {

/// Samples reached by a batch whose mean matched MSE drops below this count
/// as recovered when measuring iterations-to-threshold.
inline constexpr double kRecoveryMse = 1e-2;

/// Everything the attacker holds after watching one round, plus the ground
/// truth used for scoring.
struct RoundSnapshot {
  ParamSet params;
  GradSet observed;
  std::size_t batch = 0;
  Tensor truth_x;                                      // image models: [N, input_size]
  std::vector<std::size_t> truth_labels;
  std::vector<std::vector<std::size_t>> truth_tokens;  // embed classifier
  std::size_t overflows = 0;                           // quantizer saturations
};

struct RunRecord {
  ScenarioConfig config;
  std::optional<double> stage;  // training-stage sweeps only
  EvalReport report;
  bool images = true;  // image model (else tokens)
  double distance = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  std::size_t iterations = 0;
  std::size_t best_iteration = 0;
  std::optional<std::size_t> threshold_iteration;  // first iteration with matched MSE < kRecoveryMse
  std::size_t evaluations = 0;
  std::size_t stalls = 0;
  std::size_t overflows = 0;
  double seconds = 0.0;
  std::string error;
  AttackResult attack;
  std::vector<std::vector<std::size_t>> recovered_tokens;
};

namespace detail {

// Rows idx[i] of `set` (taken modulo its size).
inline Batch gather(const ImageSet& set, const std::vector<std::size_t>& idx, std::size_t classes,
                    std::vector<std::size_t>* labels_out = nullptr) {
  const std::size_t p = set.pixels();
  const std::size_t n = idx.size();
  Tensor x({n, p});
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = idx[i] % set.count();
    std::copy_n(set.images.data().begin() + static_cast<std::ptrdiff_t>(src * p), p,
                x.data().begin() + static_cast<std::ptrdiff_t>(i * p));
    labels.push_back(set.labels[src] % classes);
  }
  if (labels_out) *labels_out = labels;
  return Batch{std::move(x), one_hot(labels, classes)};
}

inline std::vector<std::size_t> index_range(std::size_t start, std::size_t n) {
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = start + i;
  return out;
}

template <typename T>
std::vector<T> take_wrapped(const std::vector<T>& xs, std::size_t start, std::size_t n) {
  std::vector<T> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(xs[(start + i) % xs.size()]);
  return out;
}

inline std::vector<std::size_t> random_labels(std::size_t n, std::size_t classes, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, classes - 1);
  std::vector<std::size_t> out(n);
  for (auto& l : out) l = pick(rng);
  return out;
}

}  // namespace detail

/// A live federation built from a configuration.
class Scenario {
 public:
  explicit Scenario(ScenarioConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const ModelSpec& m = cfg_.model;
    const std::size_t per_round = cfg_.workers * cfg_.batch;
    const std::size_t train_total = cfg_.workers * cfg_.train_pool;
    const ParamSet init = init_params(m, derive_seed(cfg_.seed, "init"));
    workers_.resize(cfg_.workers);
    for (auto& w : workers_) w.params = init;
    attack_batches_.resize(cfg_.workers);
    attack_labels_.resize(cfg_.workers);

    if (m.kind == ModelKind::kEmbedClassifier) {
      std::vector<std::vector<std::size_t>> attack_pool;
      if (cfg_.source == DataSource::kTokenFile) {
        const auto all = load_token_file(cfg_.data_path);
        if (all.empty()) throw Error("'" + cfg_.data_path + "' holds no sentences");
        attack_pool = detail::take_wrapped(all, cfg_.data_offset, per_round);
        train_tokens_ = detail::take_wrapped(all, cfg_.data_offset + per_round, train_total);
      } else {
        attack_pool = synthetic_sentences(per_round, m.seq_len, m.vocab, derive_seed(cfg_.seed, "data"));
        train_tokens_ = synthetic_sentences(train_total, m.seq_len, m.vocab, derive_seed(cfg_.seed, "train-data"));
      }
      const auto attack_lab = detail::random_labels(per_round, m.classes, derive_seed(cfg_.seed, "labels"));
      train_set_.labels = detail::random_labels(train_total, m.classes, derive_seed(cfg_.seed, "train-labels"));
      attack_sentences_.resize(cfg_.workers);
      for (std::size_t k = 0; k < cfg_.workers; ++k) {
        const auto lo = static_cast<std::ptrdiff_t>(k * cfg_.batch);
        const auto hi = lo + static_cast<std::ptrdiff_t>(cfg_.batch);
        attack_sentences_[k].assign(attack_pool.begin() + lo, attack_pool.begin() + hi);
        attack_labels_[k].assign(attack_lab.begin() + lo, attack_lab.begin() + hi);
        attack_batches_[k].y = one_hot(attack_labels_[k], m.classes);
      }
      return;
    }

    ImageSet attack_set;
    std::size_t attack_start = 0;
    switch (cfg_.source) {
      case DataSource::kSynthetic:
        attack_set = synthetic_images(per_round, m.channels, m.height, m.width, m.classes, derive_seed(cfg_.seed, "data"));
        train_set_ = synthetic_images(train_total, m.channels, m.height, m.width, m.classes, derive_seed(cfg_.seed, "train-data"));
        break;
      case DataSource::kIdx:
        attack_set = load_idx(cfg_.data_path, cfg_.labels_path);
        break;
      case DataSource::kPpmDir:
        attack_set = load_ppm_dir(cfg_.data_path);
        break;
      case DataSource::kTokenFile:
        throw Error("token-file data needs model.kind = embed");
    }
    if (cfg_.source != DataSource::kSynthetic) {
      if (attack_set.channels != m.channels || attack_set.height != m.height || attack_set.width != m.width) {
        throw ShapeError("data images are " + std::to_string(attack_set.channels) + "x" +
                         std::to_string(attack_set.height) + "x" + std::to_string(attack_set.width) +
                         ", model expects " + shape_str(m.image_shape()));
      }
      train_set_ = attack_set;
      attack_start = cfg_.data_offset;
      train_start_ = cfg_.data_offset + per_round;
    }
    for (std::size_t k = 0; k < cfg_.workers; ++k) {
      attack_batches_[k] = detail::gather(attack_set, detail::index_range(attack_start + k * cfg_.batch, cfg_.batch),
                                          m.classes, &attack_labels_[k]);
    }
  }

  const ScenarioConfig& config() const { return cfg_; }
  const std::vector<Worker>& workers() const { return workers_; }
  std::size_t steps_done() const { return steps_; }

  /// Synchronous training rounds. Worker k owns train.pool training samples
  /// and walks through them `batch` at a time.
  void train(std::size_t rounds) {
    const std::size_t pool = cfg_.train_pool, n = cfg_.batch;
    for (std::size_t r = 0; r < rounds; ++r) {
      for (std::size_t k = 0; k < workers_.size(); ++k) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = k * pool + (steps_ * n + i) % pool;
        Worker& w = workers_[k];
        if (cfg_.model.kind == ModelKind::kEmbedClassifier) {
          std::vector<std::size_t> labels;
          w.sentences.clear();
          for (std::size_t i : idx) {
            w.sentences.push_back(train_tokens_[i]);
            labels.push_back(train_set_.labels[i]);
          }
          w.batch.y = one_hot(labels, cfg_.model.classes);
        } else {
          for (auto& i : idx) i += train_start_;
          w.batch = detail::gather(train_set_, idx, cfg_.model.classes);
        }
      }
      simulate_round(cfg_.model, workers_, Topology::kCentralized, 0, cfg_.train_lr);
      ++steps_;
    }
  }

  /// The attacked round: workers share (possibly defended) gradients on the
  /// private batches; weights are left unchanged.
  RoundSnapshot observe() {
    for (std::size_t k = 0; k < workers_.size(); ++k) {
      workers_[k].batch = attack_batches_[k];
      if (!attack_sentences_.empty()) workers_[k].sentences = attack_sentences_[k];
    }
    RoundSnapshot snap;
    snap.params = workers_.front().params;
    const DefenseSpec& def = cfg_.defense;
    ShareFn share = [&](std::size_t k, const GradSet& g) -> GradSet {
      if (def.kind == DefenseKind::kAccumulate) {
        if (cfg_.model.kind == ModelKind::kEmbedClassifier) throw Error("accumulate defense needs an image model");
        return accumulate_local(cfg_.model, workers_[k].params, {workers_[k].batch}, def.local_steps, def.local_lr).effective;
      }
      DefenseSpec d = def;
      d.seed = derive_seed(cfg_.seed, "defense", k);
      QuantizeStats stats;
      GradSet out = apply_defense(g, d, &stats);
      snap.overflows += stats.overflows;
      return out;
    };
    const RoundObservation obs = simulate_round(cfg_.model, workers_, cfg_.topology, 0, 0.0, share);

    std::vector<std::size_t> owners;
    if (cfg_.observe_average) {
      snap.observed = obs.average;
      for (std::size_t k = 0; k < cfg_.workers; ++k) owners.push_back(k);
    } else {
      if (std::find(obs.observed.begin(), obs.observed.end(), cfg_.target) == obs.observed.end()) {
        throw Error("attacker cannot observe worker " + std::to_string(cfg_.target));
      }
      snap.observed = obs.shared[cfg_.target];
      owners.push_back(cfg_.target);
    }
    snap.batch = owners.size() * cfg_.batch;
    std::vector<double> xs;
    for (std::size_t k : owners) {
      snap.truth_labels.insert(snap.truth_labels.end(), attack_labels_[k].begin(), attack_labels_[k].end());
      if (cfg_.model.kind == ModelKind::kEmbedClassifier) {
        snap.truth_tokens.insert(snap.truth_tokens.end(), attack_sentences_[k].begin(), attack_sentences_[k].end());
      } else {
        xs.insert(xs.end(), attack_batches_[k].x.data().begin(), attack_batches_[k].x.data().end());
      }
    }
    if (!xs.empty()) snap.truth_x = Tensor({snap.batch, cfg_.model.input_size()}, std::move(xs));
    return snap;
  }

 private:
  ScenarioConfig cfg_;
  std::vector<Worker> workers_;
  std::vector<Batch> attack_batches_;
  std::vector<std::vector<std::size_t>> attack_labels_;
  std::vector<std::vector<std::vector<std::size_t>>> attack_sentences_;
  ImageSet train_set_;  // images (labels only, for tokens)
  std::size_t train_start_ = 0;
  std::vector<std::vector<std::size_t>> train_tokens_;
  std::size_t steps_ = 0;
};

namespace detail {

inline void write_trace_csv(const AttackTrace& trace, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write '" + path + "'");
  os << "iteration,distance,probe";
  if (!trace.records.empty())
    for (const auto& l : trace.records.front().layers) os << ",layer." << l.name << ".mse,layer." << l.name << ".sum";
  os << "\n";
  for (const auto& r : trace.records) {
    os << r.iteration << "," << detail::format_double(r.distance) << "," << (r.probe ? detail::format_double(*r.probe) : "");
    for (const auto& l : r.layers) os << "," << detail::format_double(l.mse) << "," << detail::format_double(l.sum);
    os << "\n";
  }
}

}  // namespace detail

/// Attacks a snapshot and scores the result. Artifacts (images, trace) go
/// to `artifact_dir` when requested by the configuration.
inline RunRecord attack_snapshot(const ScenarioConfig& cfg, const RoundSnapshot& snap,
                                 const std::string& artifact_dir = "") {
  RunRecord rec;
  rec.config = cfg;
  rec.overflows = snap.overflows;
  rec.images = cfg.model.kind != ModelKind::kEmbedClassifier;
  const auto t0 = std::chrono::steady_clock::now();

  AttackConfig ac = cfg.attack;
  ac.seed = derive_seed(cfg.seed, "attack");
  AttackOptions opt;
  if (rec.images) {
    const Tensor& truth = snap.truth_x;
    opt.probe = [&truth](const Tensor& x) { return match_batch(x, truth).mean_mse; };
  }
  rec.attack = cfg.cyclic ? dlg_attack_batched(cfg.model, snap.params, snap.observed, snap.batch, ac, opt)
                          : dlg_attack(cfg.model, snap.params, snap.observed, snap.batch, ac, opt);
  const AttackResult& r = rec.attack;
  rec.error = r.error;
  rec.distance = r.distance;
  rec.converged = r.converged;
  rec.best_iteration = r.best_iteration;
  rec.evaluations = r.trace.evaluations;
  rec.stalls = r.trace.stalls;
  if (!r.trace.records.empty()) rec.iterations = r.trace.records.back().iteration;
  for (const auto& t : r.trace.records) {
    if (t.iteration == r.best_iteration) rec.report.layers = t.layers;
    if (!rec.threshold_iteration && t.probe && *t.probe < kRecoveryMse) rec.threshold_iteration = t.iteration;
  }

  const std::size_t n = snap.batch;
  if (rec.images) {
    const BatchMatch m = match_batch(r.x, snap.truth_x);
    rec.report.image_mse = m.mean_mse;
    rec.report.sample_mse = m.sample_mse;
    rec.report.permutation = m.permutation;
    rec.report.verdict = judge_defendability(m.mean_mse, cfg.threshold);
  } else {
    const Tensor& table = snap.params.at("embed.weight");
    for (std::size_t i = 0; i < n; ++i) {
      rec.recovered_tokens.push_back(recover_tokens(r.x.data().subspan(i * cfg.model.input_size(), cfg.model.input_size()), table));
    }
    std::vector<double> cost(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = 1.0 - match_tokens(rec.recovered_tokens[i], snap.truth_tokens[j]);
    rec.report.permutation = min_cost_assignment(cost, n);
    double rate = 0.0;
    for (std::size_t i = 0; i < n; ++i) rate += 1.0 - cost[i * n + rec.report.permutation[i]];
    rec.report.token_match = rate / static_cast<double>(n);
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) correct += r.labels[i] == snap.truth_labels[rec.report.permutation[i]];
  rec.report.label_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!artifact_dir.empty() && (cfg.write_images || cfg.write_trace)) {
    std::filesystem::create_directories(artifact_dir);
    if (cfg.write_trace) detail::write_trace_csv(r.trace, artifact_dir + "/trace.csv");
    const ModelSpec& m = cfg.model;
    if (cfg.write_images && rec.images && (m.channels == 1 || m.channels == 3)) {
      const std::size_t per = m.input_size();
      const std::string ext = m.channels == 1 ? ".pgm" : ".ppm";
      for (std::size_t i = 0; i < n; ++i) {
        write_image(r.x.data().subspan(i * per, per), m.channels, m.height, m.width,
                    artifact_dir + "/recovered_" + std::to_string(i) + ext);
        write_image(snap.truth_x.data().subspan(rec.report.permutation[i] * per, per), m.channels, m.height,
                    m.width, artifact_dir + "/truth_" + std::to_string(i) + ext);
      }
    }
  }
  return rec;
}

/// Train for train.steps rounds, observe one round, attack it.
inline RunRecord run_scenario(const ScenarioConfig& cfg, const std::string& artifact_dir = "") {
  Scenario sc(cfg);
  sc.train(cfg.train_steps);
  return attack_snapshot(cfg, sc.observe(), artifact_dir);
}

/// Attack at fractions `train.stages` of `train.steps` training rounds. Each
/// stage's (W, observed gradient) goes through a checkpoint on disk and the
/// attack runs on the reloaded copy.
inline std::vector<RunRecord> run_training_stage_sweep(const ScenarioConfig& cfg, const std::string& checkpoint_dir) {
  if (cfg.train_stages.empty()) throw Error("training-stage sweep needs train.stages");
  std::filesystem::create_directories(checkpoint_dir);
  std::vector<RunRecord> out;
  std::optional<Scenario> sc;
  for (std::size_t s = 0; s < cfg.train_stages.size(); ++s) {
    const double frac = cfg.train_stages[s];
    const auto target = static_cast<std::size_t>(std::llround(frac * static_cast<double>(cfg.train_steps)));
    if (!sc || sc->steps_done() > target) sc.emplace(cfg);
    sc->train(target - sc->steps_done());
    const RoundSnapshot live = sc->observe();

    const std::string stem = checkpoint_dir + "/stage" + std::to_string(s);
    save_params(stem + "_params.bin", live.params);
    save_grads(stem + "_grads.bin", live.observed);
    RoundSnapshot offline = live;
    offline.params = load_params(stem + "_params.bin");
    offline.observed = load_grads(stem + "_grads.bin");
    if (!(offline.params == live.params) || !(offline.observed == live.observed)) {
      throw Error("checkpoint round trip changed stage " + std::to_string(s));
    }
    RunRecord rec = attack_snapshot(cfg, offline, cfg.write_images || cfg.write_trace ? stem : "");
    rec.stage = frac;
    out.push_back(std::move(rec));
  }
  return out;
}

// ---- CSV -------------------------------------------------------------------

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

/// Column layout shared by every row of a sweep: run index, all resolved
/// config keys, the stage, scalar metrics, per-layer distances, error, and
/// (optionally) wall-clock seconds.
struct CsvSchema {
  std::vector<std::string> layers;
  bool timing = false;

  static const std::vector<std::string>& metric_columns() {
    static const std::vector<std::string> cols = {
        "image_mse",  "max_sample_mse", "label_accuracy",      "token_match", "verdict",
        "distance",   "converged",      "iterations",          "best_iteration",
        "threshold_iteration",          "evaluations",         "stalls",      "overflows",
        "permutation"};
    return cols;
  }

  std::string header() const {
    std::string h = "run";
    for (const auto& k : ScenarioConfig::keys()) h += "," + csv_field(k);
    h += ",stage";
    for (const auto& c : metric_columns()) h += "," + c;
    for (const auto& l : layers) h += ",layer." + l + ".mse,layer." + l + ".sum";
    h += ",error";
    if (timing) h += ",seconds";
    return h;
  }

  std::string row(std::size_t run, const RunRecord& r) const {
    auto num = [](double v) { return std::isnan(v) ? std::string() : detail::format_double(v); };
    std::string s = std::to_string(run);
    for (const auto& k : ScenarioConfig::keys()) s += "," + csv_field(r.config.get(k));
    s += "," + (r.stage ? detail::format_double(*r.stage) : std::string());
    const bool ok = !std::isnan(r.distance);
    const EvalReport& e = r.report;
    double max_sample = std::numeric_limits<double>::quiet_NaN();
    for (double v : e.sample_mse) max_sample = std::isnan(max_sample) ? v : std::max(max_sample, v);
    std::string perm;
    for (std::size_t i = 0; i < e.permutation.size(); ++i) perm += (i ? ";" : "") + std::to_string(e.permutation[i]);
    s += "," + num(e.image_mse) + "," + num(max_sample) + "," + num(e.label_accuracy) + "," + num(e.token_match);
    s += "," + (ok && r.images ? std::string(verdict_name(e.verdict)) : std::string());
    s += "," + num(r.distance) + "," + (ok ? (r.converged ? "true" : "false") : "");
    s += "," + (ok ? std::to_string(r.iterations) : "") + "," + (ok ? std::to_string(r.best_iteration) : "");
    s += "," + (r.threshold_iteration ? std::to_string(*r.threshold_iteration) : std::string());
    s += "," + (ok ? std::to_string(r.evaluations) : "") + "," + (ok ? std::to_string(r.stalls) : "");
    s += "," + (ok ? std::to_string(r.overflows) : "") + "," + perm;
    for (const auto& l : layers) {
      const LayerDistance* d = nullptr;
      for (const auto& x : e.layers) {
        if (x.name == l) d = &x;
      }
      s += "," + (d ? detail::format_double(d->mse) : "") + "," + (d ? detail::format_double(d->sum) : "");
    }
    s += "," + csv_field(r.error);
    if (timing) s += "," + detail::format_double(r.seconds);
    return s;
  }
};

/// Worker threads for sweeps: GRADLEAK_THREADS, 0 or unset meaning serial.
inline std::size_t sweep_threads_from_env() {
  const char* v = std::getenv("GRADLEAK_THREADS");
  if (!v || !*v) return 0;
  try {
    return detail::parse_size(v);
  } catch (const Error&) {
    throw Error(std::string("GRADLEAK_THREADS must be a nonnegative integer, got '") + v + "'");
  }
}

/// One configuration of a sweep: a single run, or one run per training stage.
inline std::vector<RunRecord> run_job(const ScenarioConfig& cfg, const std::string& dir) {
  try {
    if (!cfg.train_stages.empty()) return run_training_stage_sweep(cfg, dir);
    return {run_scenario(cfg, dir)};
  } catch (const std::exception& e) {
    RunRecord r;
    r.config = cfg;
    r.images = cfg.model.kind != ModelKind::kEmbedClassifier;
    r.error = e.what();
    return {r};
  }
}

/// Runs the cartesian product of the sweep axes, writing the header and then
/// each row (flushed) in logical order, whatever order runs finish in.
inline std::vector<RunRecord> run_sweep(const ScenarioConfig& base, std::ostream& csv, std::size_t threads) {
  const std::vector<ScenarioConfig> jobs = expand_sweep(base);
  CsvSchema schema;
  schema.timing = base.timing;
  for (const auto& c : jobs) {
    try {
      for (const auto& p : param_layout(c.model)) {
        if (std::find(schema.layers.begin(), schema.layers.end(), p.name) == schema.layers.end()) {
          schema.layers.push_back(p.name);
        }
      }
    } catch (const Error&) {
      // invalid model: the run reports it in its error column
    }
  }
  csv << schema.header() << "\n" << std::flush;

  std::vector<std::optional<std::vector<RunRecord>>> done(jobs.size());
  std::mutex mu;
  std::condition_variable cv;
  std::atomic<std::size_t> next{0};
  auto job_dir = [&](std::size_t i) { return base.out_dir + "/run" + std::to_string(i); };
  auto work = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      auto recs = run_job(jobs[i], job_dir(i));
      std::lock_guard<std::mutex> lock(mu);
      done[i] = std::move(recs);
      cv.notify_all();
    }
  };
  std::vector<std::thread> pool;
  const std::size_t nthreads = std::min(threads, jobs.size());
  for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(work);

  std::vector<RunRecord> all;
  std::size_t row = 0;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (nthreads == 0) {
      done[i] = run_job(jobs[i], job_dir(i));
    } else {
      std::unique_lock<std::mutex> lock(mu);
      cv.wait(lock, [&] { return done[i].has_value(); });
    }
    for (auto& r : *done[i]) {
      csv << schema.row(row++, r) << "\n" << std::flush;
      all.push_back(std::move(r));
    }
    done[i].reset();
  }
  for (auto& t : pool) t.join();
  return all;
}

/// Writes <out_dir>/sweep.csv.
inline std::vector<RunRecord> run_sweep(const ScenarioConfig& base) {
  std::filesystem::create_directories(base.out_dir);
  const std::string path = base.out_dir + "/sweep.csv";
  std::ofstream os(path);
  if (!os) throw Error("cannot write '" + path + "'");
  return run_sweep(base, os, sweep_threads_from_env());
}

}  // namespace gradleak
