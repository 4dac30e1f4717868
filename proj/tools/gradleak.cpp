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

// gradleak: command-line driver.
//
//   gradleak attack    --config run.cfg --set defense.kind=gaussian
//   gradleak sweep     --config grid.cfg --out results/
//   gradleak gradcheck
//   gradleak train     --set train.steps=100 --set train.stages=0,0.5,1
//   gradleak tokens    --seed 3

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gradleak/gradleak.hpp"

namespace {

using namespace gradleak;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "config file (key = value lines)");
  cmd->add_option("--seed", c.seed, "master seed");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--set", c.sets, "override, key=value (repeatable)")->take_all();
}

// Config file first, then --set overrides, then --seed / --out.
ScenarioConfig resolve(const Common& c, ScenarioConfig cfg = {}) {
  if (!c.config.empty()) apply_config_file(cfg, c.config);
  for (const auto& s : c.sets) apply_override(cfg, s);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out_dir = c.out;
  return cfg;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

void print_record(std::size_t i, const RunRecord& r) {
  std::cout << "run " << i;
  if (r.stage) std::cout << " stage " << fmt(*r.stage);
  if (!r.error.empty() && std::isnan(r.distance)) {
    std::cout << ": error: " << r.error << "\n";
    return;
  }
  std::cout << ": D=" << fmt(r.distance);
  if (r.images) {
    std::cout << " mse=" << fmt(r.report.image_mse) << " (" << verdict_name(r.report.verdict) << ")";
  } else {
    std::cout << " tokens=" << fmt(r.report.token_match);
  }
  std::cout << " labels=" << fmt(r.report.label_accuracy) << " iterations=" << r.iterations;
  if (r.threshold_iteration) std::cout << " recovered@" << *r.threshold_iteration;
  if (!r.error.empty()) std::cout << " error: " << r.error;
  std::cout << "\n";
}

int run_attack(const Common& common) {
  ScenarioConfig cfg = resolve(common);
  if (!cfg.sweep.empty()) std::cerr << "note: sweep axes ignored by 'attack'; use 'sweep'\n";
  cfg.sweep.clear();
  std::filesystem::create_directories(cfg.out_dir);
  const std::string path = cfg.out_dir + "/attack.csv";
  std::ofstream os(path);
  if (!os) throw Error("cannot write '" + path + "'");
  const auto recs = run_sweep(cfg, os, 0);
  for (std::size_t i = 0; i < recs.size(); ++i) print_record(i, recs[i]);
  std::cout << "wrote " << path << "\n";
  return 0;
}

int run_sweep_cmd(const Common& common) {
  const ScenarioConfig cfg = resolve(common);
  const auto recs = run_sweep(cfg);
  std::size_t failed = 0;
  for (const auto& r : recs) failed += !r.error.empty();
  std::cout << recs.size() << " rows, " << failed << " with errors -> " << cfg.out_dir << "/sweep.csv\n";
  return 0;
}

int run_gradcheck(std::size_t graphs, double tolerance, std::uint64_t seed) {
  const GradcheckStats first = check_random_graphs(graphs, seed);
  std::cout << "first order:  " << first.cases << " graphs, " << first.entries
            << " entries, max rel err " << fmt(first.max_rel) << "  (" << first.worst << ")\n";
  double worst2 = 0.0;
  const std::vector<ModelSpec> models = {
      ModelSpec::mlp(1, 4, 4, {}, 3), ModelSpec::mlp(1, 4, 4, {6}, 3), ModelSpec::mlp(1, 4, 4, {6, 5}, 3),
      ModelSpec::convnet(1, 5, 5, {2}, 3, {}, 3)};
  for (std::size_t i = 0; i < models.size(); ++i) {
    const GradcheckStats s = check_distance_second_order(models[i], 2, derive_seed(seed, "second", i));
    std::cout << "second order: " << model_kind_name(models[i].kind) << " (" << models[i].hidden.size() + 1
              << " dense layers) max rel err " << fmt(s.max_rel) << "\n";
    worst2 = std::max(worst2, s.max_rel);
  }
  const bool ok = first.max_rel < tolerance && worst2 < tolerance;
  std::cout << (ok ? "PASS" : "FAIL") << " (tolerance " << fmt(tolerance) << ")\n";
  return ok ? 0 : 1;
}

int run_train(const Common& common) {
  ScenarioConfig cfg = resolve(common);
  std::vector<double> stages = cfg.train_stages.empty() ? std::vector<double>{1.0} : cfg.train_stages;
  std::filesystem::create_directories(cfg.out_dir);
  Scenario sc(cfg);
  for (double f : stages) {
    const auto target = static_cast<std::size_t>(std::llround(f * static_cast<double>(cfg.train_steps)));
    if (target < sc.steps_done()) throw Error("train.stages must be nondecreasing");
    sc.train(target - sc.steps_done());
    const std::string stem = cfg.out_dir + "/step" + std::to_string(target);
    const RoundSnapshot snap = sc.observe();
    save_params(stem + "_params.bin", snap.params);
    save_grads(stem + "_grads.bin", snap.observed);
    std::cout << "step " << target << ": " << stem << "_params.bin, " << stem << "_grads.bin\n";
  }
  return 0;
}

int run_tokens(const Common& common) {
  ScenarioConfig defaults;
  defaults.model = ModelSpec::embed_classifier(50, 8, 5, {16}, 4);
  ScenarioConfig cfg = resolve(common, defaults);
  if (cfg.model.kind != ModelKind::kEmbedClassifier) throw Error("'tokens' needs model.kind = embed");
  cfg.sweep.clear();
  Scenario sc(cfg);
  sc.train(cfg.train_steps);
  const RoundSnapshot snap = sc.observe();
  const RunRecord r = attack_snapshot(cfg, snap);
  for (std::size_t i = 0; i < snap.batch; ++i) {
    const auto& truth = snap.truth_tokens[r.report.permutation[i]];
    std::cout << "truth:    ";
    for (auto t : truth) std::cout << " " << t;
    std::cout << "\nrecovered:";
    for (auto t : r.recovered_tokens[i]) std::cout << " " << t;
    std::cout << "\n";
  }
  std::cout << "token match " << fmt(r.report.token_match) << ", label accuracy " << fmt(r.report.label_accuracy)
            << ", D=" << fmt(r.distance) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gradleak: gradient leakage attacks and defenses"};
  app.require_subcommand(1);
  Common attack, sweep, train, tokens;
  auto* a = app.add_subcommand("attack", "run one attack scenario");
  add_common(a, attack);
  auto* s = app.add_subcommand("sweep", "run the cartesian product of sweep.* axes");
  add_common(s, sweep);
  auto* t = app.add_subcommand("train", "train and write checkpoints at train.stages");
  add_common(t, train);
  auto* k = app.add_subcommand("tokens", "token leakage demo on the embedding classifier");
  add_common(k, tokens);
  auto* g = app.add_subcommand("gradcheck", "verify autodiff against finite differences");
  std::size_t graphs = 100;
  double tolerance = 1e-5;
  std::uint64_t gseed = 0;
  g->add_option("--graphs", graphs, "random graphs to check");
  g->add_option("--tolerance", tolerance, "max relative error");
  g->add_option("--seed", gseed, "seed");

  CLI11_PARSE(app, argc, argv);
  try {
    if (a->parsed()) return run_attack(attack);
    if (s->parsed()) return run_sweep_cmd(sweep);
    if (t->parsed()) return run_train(train);
    if (k->parsed()) return run_tokens(tokens);
    if (g->parsed()) return run_gradcheck(graphs, tolerance, gseed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
