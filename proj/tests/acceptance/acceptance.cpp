// Copyright 2026 The gradleak Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. Pass a criterion number (or several) to
// run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradleak/gradleak.hpp"

namespace {

using namespace gradleak;

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Outcome {
  bool pass = false;
  std::string detail;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("gradleak_acceptance_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

ModelSpec toy_mlp() { return ModelSpec::mlp(1, 8, 8, {16}, 4); }
ModelSpec toy_convnet() { return ModelSpec::convnet(1, 16, 16, {4}, 5, {}, 4); }

ScenarioConfig base_config(const ModelSpec& m, std::uint64_t seed) {
  ScenarioConfig c;
  c.model = m;
  c.seed = seed;
  c.attack.iterations = 300;
  c.attack.learning_rate = 1.0;
  c.attack.history = 100;
  return c;
}

// ---- 1 ----------------------------------------------------------------------

Outcome autodiff_oracles() {
  const GradcheckStats graphs = check_random_graphs(120, 2026);
  double second = 0.0;
  std::string worst;
  std::size_t cases = 0;
  const std::vector<ModelSpec> models = {
      ModelSpec::mlp(1, 3, 3, {}, 3),
      ModelSpec::mlp(1, 3, 3, {5}, 3),
      ModelSpec::mlp(1, 3, 3, {5, 4}, 3),
      ModelSpec::convnet(1, 5, 5, {2}, 3, {}, 3),
  };
  for (const ModelSpec& m : models) {
    for (std::size_t batch : {1, 2}) {
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const GradcheckStats s = check_distance_second_order(m, batch, seed);
        ++cases;
        if (s.max_rel > second) {
          second = s.max_rel;
          worst = s.worst;
        }
      }
    }
  }
  Outcome o;
  o.pass = graphs.cases >= 100 && graphs.max_rel < 1e-5 && second < 1e-5;
  o.detail = std::to_string(graphs.cases) + " graphs / " + std::to_string(graphs.entries) +
             " entries, max rel " + fmt("%.2e", graphs.max_rel) + "; distance 2nd order " +
             std::to_string(cases) + " cases, max rel " + fmt("%.2e", second) +
             (second >= 1e-5 ? " (" + worst + ")" : "");
  return o;
}

// ---- 2 ----------------------------------------------------------------------

Outcome single_sample() {
  Outcome o{true, ""};
  for (const auto& [name, m] : {std::pair{"mlp", toy_mlp()}, std::pair{"convnet", toy_convnet()}}) {
    std::size_t ok = 0;
    double worst = 0.0;
    std::size_t max_iter = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const RunRecord r = run_scenario(base_config(m, seed));
      const bool good = r.error.empty() && r.report.image_mse < 1e-3 && r.report.label_accuracy == 1.0 &&
                        r.iterations <= 300;
      ok += good;
      worst = std::max(worst, r.report.image_mse);
      max_iter = std::max(max_iter, r.iterations);
    }
    o.pass = o.pass && ok >= 9;
    o.detail += std::string(o.detail.empty() ? "" : "; ") + name + " " + std::to_string(ok) +
                "/10 (worst mse " + fmt("%.1e", worst) + ", max iterations " + std::to_string(max_iter) + ")";
  }
  return o;
}

// ---- 3 ----------------------------------------------------------------------

Outcome batched_monotonicity() {
  constexpr std::size_t kSeeds = 5;
  std::vector<double> medians;
  bool reach = true;
  std::string detail;
  for (std::size_t n : {1, 2, 4, 8}) {
    std::vector<double> its;
    std::size_t reached = 0;
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
      ScenarioConfig c = base_config(toy_mlp(), seed);
      c.batch = n;
      c.cyclic = true;
      c.attack.iterations = 1200;
      const RunRecord r = run_scenario(c);
      its.push_back(r.threshold_iteration ? static_cast<double>(*r.threshold_iteration) : kInf);
      const double worst = r.report.sample_mse.empty()
                               ? kInf
                               : *std::max_element(r.report.sample_mse.begin(), r.report.sample_mse.end());
      reached += worst < kRecoveryMse;
    }
    medians.push_back(median(its));
    if (n <= 4 && 2 * reached <= kSeeds) reach = false;
    detail += (detail.empty() ? "" : ", ") + std::string("N=") + std::to_string(n) + ": median " +
              (std::isinf(medians.back()) ? std::string("never") : fmt("%.0f", medians.back())) + " (" +
              std::to_string(reached) + "/" + std::to_string(kSeeds) + " all samples < 1e-2)";
  }
  const bool monotone = std::is_sorted(medians.begin(), medians.end());
  // Informational only: the joint (all samples at once) attack on the same runs.
  std::string joint;
  for (std::size_t n : {1, 2, 4, 8}) {
    std::vector<double> its;
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
      ScenarioConfig c = base_config(toy_mlp(), seed);
      c.batch = n;
      const RunRecord r = run_scenario(c);
      its.push_back(r.threshold_iteration ? static_cast<double>(*r.threshold_iteration) : kInf);
    }
    const double med = median(its);
    joint += " " + (std::isinf(med) ? std::string("never") : fmt("%.0f", med));
  }
  return {monotone && reach,
          detail + (monotone ? "" : "; not monotone") + "; joint attack medians (info):" + joint};
}

// ---- 4 ----------------------------------------------------------------------

Verdict majority(const ModelSpec& m, const DefenseSpec& d, double* med_mse = nullptr) {
  std::size_t defended = 0;
  std::vector<double> mses;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ScenarioConfig c = base_config(m, seed);
    c.defense = d;
    const RunRecord r = run_scenario(c);
    defended += r.report.verdict == Verdict::kDefended;
    mses.push_back(r.report.image_mse);
  }
  if (med_mse) *med_mse = median(mses);
  return defended >= 3 ? Verdict::kDefended : Verdict::kLeaked;
}

Outcome defense_thresholds() {
  struct Cell {
    std::string label;
    DefenseSpec spec;
    Verdict expect;
  };
  auto noise = [](DefenseKind k, double v) {
    DefenseSpec d;
    d.kind = k;
    d.variance = v;
    return d;
  };
  auto kind = [](DefenseKind k) {
    DefenseSpec d;
    d.kind = k;
    return d;
  };
  auto prune = [](double s) {
    DefenseSpec d;
    d.kind = DefenseKind::kPrune;
    d.sparsity = s;
    return d;
  };
  const std::vector<Cell> cells = {
      {"gaussian 1e-4", noise(DefenseKind::kGaussian, 1e-4), Verdict::kLeaked},
      {"gaussian 1e-1", noise(DefenseKind::kGaussian, 1e-1), Verdict::kDefended},
      {"laplacian 1e-4", noise(DefenseKind::kLaplacian, 1e-4), Verdict::kLeaked},
      {"laplacian 1e-1", noise(DefenseKind::kLaplacian, 1e-1), Verdict::kDefended},
      {"fp16", kind(DefenseKind::kFp16), Verdict::kLeaked},
      {"bf16", kind(DefenseKind::kBf16), Verdict::kLeaked},
      {"int8", kind(DefenseKind::kInt8), Verdict::kDefended},
      {"prune 0.0", prune(0.0), Verdict::kLeaked},
      {"prune 0.1", prune(0.1), Verdict::kLeaked},
      {"prune 0.7", prune(0.7), Verdict::kDefended},
      {"prune 0.8", prune(0.8), Verdict::kDefended},
      {"prune 0.9", prune(0.9), Verdict::kDefended},
  };
  Outcome o{true, ""};
  for (const auto& [name, m] : {std::pair{"mlp", toy_mlp()}, std::pair{"convnet", toy_convnet()}}) {
    std::string wrong;
    for (const Cell& cell : cells) {
      double mse = 0.0;
      const Verdict v = majority(m, cell.spec, &mse);
      if (v != cell.expect) {
        wrong += " [" + cell.label + ": " + std::string(verdict_name(v)) + ", median mse " + fmt("%.1e", mse) + "]";
      }
    }
    // Crossing: first sparsity in steps of 0.1 whose majority verdict is defended.
    std::string crossing = "none below 0.9";
    for (int s = 0; s <= 9; ++s) {
      if (majority(m, prune(s / 10.0)) == Verdict::kDefended) {
        crossing = fmt("%.1f", s / 10.0);
        break;
      }
    }
    o.pass = o.pass && wrong.empty();
    o.detail += std::string(o.detail.empty() ? "" : "; ") + name + ": " +
                (wrong.empty() ? "all cells as expected" : "mismatched" + wrong) + ", prune crossing " + crossing;
  }
  return o;
}

// ---- 5 ----------------------------------------------------------------------

Outcome accumulation() {
  constexpr std::size_t kSeeds = 5;
  std::vector<double> medians;
  bool identical = true;
  std::string detail;
  for (std::size_t k : {1, 2, 4}) {
    std::vector<double> mses;
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
      ScenarioConfig c = base_config(toy_mlp(), seed);
      c.defense.kind = DefenseKind::kAccumulate;
      c.defense.local_steps = k;
      c.defense.local_lr = 0.1;
      const RunRecord r = run_scenario(c);
      mses.push_back(r.report.image_mse);
      if (k == 1) {
        const RunRecord plain = run_scenario(base_config(toy_mlp(), seed));
        identical = identical && plain.attack.x == r.attack.x && plain.distance == r.distance;
      }
    }
    medians.push_back(median(mses));
    detail += (detail.empty() ? "" : ", ") + std::string("k=") + std::to_string(k) + " median mse " +
              fmt("%.2e", medians.back());
  }
  const bool monotone = std::is_sorted(medians.begin(), medians.end());
  return {monotone && identical,
          detail + (identical ? "; k=1 identical to single step" : "; k=1 differs from single step")};
}

// ---- 6 ----------------------------------------------------------------------

Outcome training_stages() {
  const std::vector<double> stages = {0.0, 0.3, 0.7, 1.0};
  std::vector<std::vector<double>> per_stage(stages.size());
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ScenarioConfig c = base_config(toy_mlp(), seed);
    c.train_steps = 100;
    c.train_lr = 0.1;
    c.train_pool = 32;
    c.train_stages = stages;
    const auto runs = run_training_stage_sweep(c, scratch("stages"));
    for (std::size_t s = 0; s < runs.size(); ++s) per_stage[s].push_back(runs[s].report.image_mse);
  }
  Outcome o{true, ""};
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const double med = median(per_stage[s]);
    const double worst = *std::max_element(per_stage[s].begin(), per_stage[s].end());
    o.pass = o.pass && worst < kRecoveryMse;
    o.detail += (o.detail.empty() ? "" : ", ") + fmt("%.0f%%", 100 * stages[s]) + " median " + fmt("%.1e", med) +
                " worst " + fmt("%.1e", worst);
  }
  return o;
}

// ---- 7 ----------------------------------------------------------------------

Outcome tokens() {
  std::size_t ok = 0;
  double lowest = 1.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ScenarioConfig c = base_config(ModelSpec::embed_classifier(50, 8, 5, {16}, 4), seed);
    const RunRecord r = run_scenario(c);
    ok += r.error.empty() && r.report.token_match >= 0.8;
    lowest = std::min(lowest, r.report.token_match);
  }
  return {ok >= 8, std::to_string(ok) + "/10 seeds with >= 80% tokens, lowest match " + fmt("%.2f", lowest)};
}

// ---- 8 ----------------------------------------------------------------------

ScenarioConfig small_config(std::uint64_t seed) {
  ScenarioConfig c = base_config(ModelSpec::mlp(1, 4, 4, {8}, 3), seed);
  c.attack.iterations = 20;
  return c;
}

void write_idx(const std::string& path, std::uint32_t magic, const std::vector<std::uint32_t>& dims,
               const std::vector<unsigned char>& payload) {
  std::ofstream os(path, std::ios::binary);
  auto be = [&](std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) os.put(static_cast<char>((v >> s) & 0xff));
  };
  be(magic);
  for (auto d : dims) be(d);
  os.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
}

Outcome determinism_and_invariants() {
  std::vector<std::string> failed;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };

  // Byte-identical sweep CSV: twice serially, once threaded.
  {
    ScenarioConfig base = small_config(9);
    base.out_dir = scratch("sweep");
    base.sweep = {{"defense.kind", {"none", "gaussian", "prune"}}, {"seed", {"1", "2"}}};
    std::ostringstream a, b, c;
    run_sweep(base, a, 0);
    run_sweep(base, b, 0);
    run_sweep(base, c, 3);
    check(!a.str().empty() && a.str() == b.str() && a.str() == c.str(), "sweep csv");
  }

  // Per-layer distances sum to D.
  {
    const RunRecord r = run_scenario(small_config(3));
    double sum = 0.0;
    for (const auto& l : r.report.layers) sum += l.sum;
    check(!r.report.layers.empty() && std::abs(sum - r.distance) <= 1e-12 * std::max(1.0, r.distance),
          "layer decomposition");
    std::mt19937_64 rng(4);
    std::normal_distribution<double> normal;
    GradSet a, b;
    for (const auto& p : param_layout(toy_mlp())) {
      Tensor ta(p.shape), tb(p.shape);
      for (double& v : ta.storage()) v = normal(rng);
      for (double& v : tb.storage()) v = normal(rng);
      a.insert(p.name, ta);
      b.insert(p.name, tb);
    }
    double parts = 0.0;
    for (const auto& l : per_layer_distance(a, b)) parts += l.sum;
    check(std::abs(parts - gradient_distance(a, b)) <= 1e-12 * parts, "layer decomposition (random)");
  }

  // The true input and label logits are a zero of D and of its gradient.
  for (const ModelSpec& m : {toy_mlp(), toy_convnet()}) {
    const ParamSet params = init_params(m, 17);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> normal;
    const std::size_t n = 2;
    Tensor x({n, m.input_size()}), logits({n, m.classes});
    for (double& v : x.storage()) v = u(rng);
    for (double& v : logits.storage()) v = normal(rng);
    Tensor y({n, m.classes});
    for (std::size_t i = 0; i < n; ++i) {
      double z = 0.0;
      for (std::size_t j = 0; j < m.classes; ++j) z += std::exp(logits[i * m.classes + j]);
      for (std::size_t j = 0; j < m.classes; ++j) y[i * m.classes + j] = std::exp(logits[i * m.classes + j]) / z;
    }
    GradientMatching problem(m, params, true_gradients(m, params, x, y), n);
    std::vector<double> state(x.data().begin(), x.data().end());
    state.insert(state.end(), logits.data().begin(), logits.data().end());
    std::vector<double> grad(state.size());
    const double d = problem.evaluate(state, grad);
    double gmax = 0.0;
    for (double g : grad) gmax = std::max(gmax, std::abs(g));
    check(d < 1e-24 && gmax < 1e-12, std::string("zero fixed point (") + std::string(model_kind_name(m.kind)) + ")");
  }

  // Synchronous workers hold identical weights after every round.
  {
    ScenarioConfig c = small_config(6);
    c.workers = 3;
    c.train_pool = 4;
    Scenario sc(c);
    bool same = true;
    for (int round = 0; round < 5; ++round) {
      sc.train(1);
      for (const Worker& w : sc.workers()) same = same && w.params == sc.workers()[0].params;
    }
    check(same, "synchronous weights");
  }

  // File formats.
  {
    const std::string dir = scratch("formats");
    const ParamSet p = init_params(toy_convnet(), 8);
    save_params(dir + "/p.bin", p);
    check(load_params(dir + "/p.bin") == p, "params checkpoint");
    const GradSet g = true_gradients(toy_mlp(), init_params(toy_mlp(), 1),
                                     synthetic_images(1, 1, 8, 8, 4, 2).batch(0, 1, 4).x, one_hot({2}, 4));
    save_grads(dir + "/g.bin", g);
    check(load_grads(dir + "/g.bin") == g, "gradient checkpoint");

    std::vector<double> px(3 * 5 * 4);
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<double>((i * 37) % 256) / 255.0;
    for (std::size_t ch : {1, 3}) {
      const std::span<const double> in(px.data(), ch * 5 * 4);
      write_image(in, ch, 5, 4, dir + "/img.pnm");
      const Image img = read_image(dir + "/img.pnm");
      bool same = img.channels == ch && img.height == 5 && img.width == 4;
      for (std::size_t i = 0; same && i < in.size(); ++i) same = img.pixels[i] == in[i];
      check(same, "pnm (" + std::to_string(ch) + " channel)");
    }

    std::vector<unsigned char> raw(3 * 2 * 2);
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<unsigned char>(i * 20);
    write_idx(dir + "/x.idx", 0x00000803, {3, 2, 2}, raw);
    write_idx(dir + "/y.idx", 0x00000801, {3}, {5, 0, 9});
    const ImageSet set = load_idx(dir + "/x.idx", dir + "/y.idx");
    bool idx_ok = set.count() == 3 && set.labels == std::vector<std::size_t>{5, 0, 9};
    for (std::size_t i = 0; idx_ok && i < raw.size(); ++i) idx_ok = set.images.data()[i] == raw[i] / 255.0;
    check(idx_ok, "idx");

    const auto sentences = synthetic_sentences(4, 5, 50, 3);
    {
      std::ofstream os(dir + "/tokens.txt");
      os << "# sentences\n";
      for (const auto& s : sentences) {
        for (std::size_t i = 0; i < s.size(); ++i) os << (i ? " " : "") << s[i];
        os << "\n";
      }
    }
    check(load_token_file(dir + "/tokens.txt") == sentences, "token file");

    ScenarioConfig cfg = small_config(12);
    cfg.defense.kind = DefenseKind::kLaplacian;
    cfg.defense.variance = 3.5e-4;
    cfg.train_stages = {0.0, 0.25, 1.0};
    std::ostringstream text;
    for (const auto& key : ScenarioConfig::keys()) text << key << " = " << cfg.get(key) << "\n";
    ScenarioConfig back;
    apply_config_text(back, text.str(), "roundtrip.conf");
    bool cfg_ok = true;
    for (const auto& key : ScenarioConfig::keys()) cfg_ok = cfg_ok && back.get(key) == cfg.get(key);
    check(cfg_ok, "config");
  }

  std::string detail = "sweep csv, layer sums, zero fixed point, synchronous weights, checkpoint/pnm/idx/token/config round trips";
  if (!failed.empty()) {
    detail = "failed:";
    for (const auto& f : failed) detail += " [" + f + "]";
  }
  return {failed.empty(), detail};
}

struct Criterion {
  int id;
  const char* title;
  double budget_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "autodiff oracle equivalence", 60, autodiff_oracles},
      {2, "single-sample leakage", 120, single_sample},
      {3, "batched leakage monotonicity", 600, batched_monotonicity},
      {4, "defense thresholds", 900, defense_thresholds},
      {5, "accumulated-gradient attack", 300, accumulation},
      {6, "training-stage independence", 300, training_stages},
      {7, "token leakage", 120, tokens},
      {8, "determinism and invariants", 120, determinism_and_invariants},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const Criterion& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_seconds) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0f", c.budget_seconds) + " s budget";
    }
    std::printf("%s %d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.title, o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
