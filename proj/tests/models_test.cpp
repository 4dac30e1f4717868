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


#include <gtest/gtest.h>

#include <set>

#include "gradleak/models.hpp"
#include "test_util.hpp"

namespace gradleak {
namespace {

using testing::random_tensor;

double sigmoid_ref(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Loops-only MLP loss: sigmoid hidden layers, affine output, mean soft CE.
double mlp_loss_oracle(const ModelSpec& spec, const ParamSet& p, const Tensor& x, const Tensor& y) {
  const std::size_t n = x.dim(0);
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<double> h(x.data().begin() + s * spec.input_size(),
                          x.data().begin() + (s + 1) * spec.input_size());
    const std::size_t layers = spec.hidden.size() + 1;
    for (std::size_t l = 0; l < layers; ++l) {
      const Tensor& w = p.at("fc" + std::to_string(l) + ".weight");
      const Tensor& b = p.at("fc" + std::to_string(l) + ".bias");
      std::vector<double> next(w.dim(1));
      for (std::size_t j = 0; j < w.dim(1); ++j) {
        double a = b[j];
        for (std::size_t i = 0; i < w.dim(0); ++i) a += h[i] * w[i * w.dim(1) + j];
        next[j] = l + 1 < layers ? sigmoid_ref(a) : a;
      }
      h = std::move(next);
    }
    double mx = h[0];
    for (double v : h) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : h) z += std::exp(v - mx);
    for (std::size_t c = 0; c < h.size(); ++c) total -= y[s * h.size() + c] * (h[c] - mx - std::log(z));
  }
  return total / static_cast<double>(n);
}

double loss_of(const ModelSpec& spec, const ParamSet& p, const Tensor& x, const Tensor& y) {
  return forward_loss(spec, p, x, y).loss.value().item();
}

TEST(Models, MlpLayout) {
  const auto layout = param_layout(ModelSpec::mlp(1, 4, 4, {8, 6}, 3));
  ASSERT_EQ(layout.size(), 6u);
  EXPECT_EQ(layout[0].name, "fc0.weight");
  EXPECT_EQ(layout[0].shape, (Shape{16, 8}));
  EXPECT_EQ(layout[3].name, "fc1.bias");
  EXPECT_EQ(layout[3].shape, (Shape{6}));
  EXPECT_EQ(layout[4].shape, (Shape{6, 3}));
  EXPECT_EQ(layout[4].fan_in, 6u);
}

TEST(Models, ConvnetLayoutShrinksWithoutPadding) {
  ModelSpec s = ModelSpec::convnet(3, 8, 8, {4, 2}, 3, {}, 5);
  s.same_padding = false;
  const auto layout = param_layout(s);
  EXPECT_EQ(layout[0].shape, (Shape{4, 3, 3, 3}));
  EXPECT_EQ(layout[1].shape, (Shape{4, 1, 1}));
  EXPECT_EQ(layout[2].shape, (Shape{2, 4, 3, 3}));
  EXPECT_EQ(layout[4].shape, (Shape{2 * 4 * 4, 5}));
}

TEST(Models, InvalidSpecsRejected) {
  EXPECT_THROW(param_layout(ModelSpec::mlp(1, 4, 4, {}, 1)), Error);
  EXPECT_THROW(param_layout(ModelSpec::mlp(1, 4, 4, {0}, 3)), Error);
  EXPECT_THROW(param_layout(ModelSpec::convnet(1, 4, 4, {2}, 4, {}, 3)), Error);
  EXPECT_THROW(param_layout(ModelSpec::embed_classifier(0, 4, 4, {}, 3)), Error);
}

TEST(Models, InitIsDeterministicAndBounded) {
  const ModelSpec spec = ModelSpec::convnet(1, 6, 6, {3}, 3, {5}, 4);
  const ParamSet a = init_params(spec, 42), b = init_params(spec, 42), c = init_params(spec, 43);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == c);
  const auto layout = param_layout(spec);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layout[i].fan_in));
    for (double v : a[i].second.data()) EXPECT_LE(std::abs(v), bound);
  }
}

TEST(Models, LossMatchesLoopOracle) {
  std::mt19937_64 rng(1);
  const ModelSpec spec = ModelSpec::mlp(1, 3, 3, {5, 4}, 3);
  const ParamSet p = init_params(spec, 1);
  const Tensor x = random_tensor({4, 9}, rng, 0.0, 1.0);
  Tensor y({4, 3});
  for (std::size_t r = 0; r < 4; ++r) {
    y[r * 3] = 0.2;
    y[r * 3 + 1] = 0.3;
    y[r * 3 + 2] = 0.5;
  }
  EXPECT_NEAR(loss_of(spec, p, x, y), mlp_loss_oracle(spec, p, x, y), 1e-12);
}

TEST(Models, BatchLossIsMeanOfSingles) {
  std::mt19937_64 rng(2);
  const ModelSpec spec = ModelSpec::convnet(1, 5, 5, {2}, 3, {4}, 3);
  const ParamSet p = init_params(spec, 2);
  const Tensor x = random_tensor({3, 25}, rng, 0.0, 1.0);
  const Tensor y = one_hot({0, 2, 1}, 3);
  double mean_single = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    Tensor xi({1, 25}), yi({1, 3});
    for (std::size_t j = 0; j < 25; ++j) xi[j] = x[i * 25 + j];
    for (std::size_t j = 0; j < 3; ++j) yi[j] = y[i * 3 + j];
    mean_single += loss_of(spec, p, xi, yi) / 3.0;
  }
  EXPECT_NEAR(loss_of(spec, p, x, y), mean_single, 1e-12);
}

TEST(Models, TrueGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (const ModelSpec& spec : {ModelSpec::mlp(1, 3, 3, {4}, 3), ModelSpec::convnet(1, 4, 4, {2}, 3, {}, 3)}) {
    const ParamSet p = init_params(spec, 3);
    const Tensor x = random_tensor({2, spec.input_size()}, rng, 0.0, 1.0);
    const Tensor y = one_hot({1, 2}, 3);
    const GradSet g = true_gradients(spec, p, x, y);
    ASSERT_TRUE(p.aligned_with(g));
    for (std::size_t t = 0; t < p.size(); ++t) {
      auto f = [&](const Tensor& v) {
        ParamSet q = p;
        q[t].second = v;
        return loss_of(spec, q, x, y);
      };
      const Tensor fd = testing::numeric_gradient(f, p[t].second);
      EXPECT_LT(testing::max_abs_diff(fd, g[t].second), 1e-8) << p[t].first;
    }
  }
}

TEST(Models, LabelRowsValidated) {
  const ModelSpec spec = ModelSpec::mlp(1, 2, 2, {}, 3);
  const ParamSet p = init_params(spec, 0);
  const Tensor x({1, 4}, 0.5);
  EXPECT_THROW(forward_loss(spec, p, x, Tensor({1, 3}, 0.5)), Error);
  EXPECT_THROW(forward_loss(spec, p, x, Tensor({1, 3}, std::vector<double>{1.5, -0.5, 0.0})), Error);
  EXPECT_THROW(forward_loss(spec, p, x, Tensor({2, 3}, 1.0 / 3)), ShapeError);
  EXPECT_THROW(forward_loss(spec, p, Tensor({1, 5}), one_hot({0}, 3)), ShapeError);
  EXPECT_THROW(one_hot({3}, 3), Error);
}

TEST(Models, EmbeddingGradientTouchesOnlyPresentTokens) {
  const ModelSpec spec = ModelSpec::embed_classifier(12, 3, 4, {5}, 2);
  const ParamSet p = init_params(spec, 4);
  const std::vector<std::vector<std::size_t>> sentences{{1, 4, 4, 9}, {0, 1, 7, 9}};
  const GradSet g = true_gradients(spec, p, sentences, one_hot({0, 1}, 2));
  const Tensor& e = g.at("embed.weight");
  const std::set<std::size_t> present{0, 1, 4, 7, 9};
  for (std::size_t row = 0; row < 12; ++row) {
    double norm = 0.0;
    for (std::size_t c = 0; c < 3; ++c) norm += std::abs(e[row * 3 + c]);
    if (present.count(row)) {
      EXPECT_GT(norm, 0.0) << row;
    } else {
      EXPECT_EQ(norm, 0.0) << row;
    }
  }
  // Embedding lookup agrees with the table.
  const Tensor emb = embed_tokens(spec, p, sentences);
  EXPECT_EQ(emb[3 * 1], p.at("embed.weight")[4 * 3]);
  EXPECT_THROW(embed_tokens(spec, p, {{1, 2, 3, 12}}), Error);
  EXPECT_THROW(true_gradients(spec, p, std::vector<std::vector<std::size_t>>{{1, 2}}, one_hot({0}, 2)), ShapeError);
}

TEST(Models, SgdStep) {
  ParamSet p;
  p.insert("w", Tensor({2}, std::vector<double>{1.0, 2.0}));
  GradSet g;
  g.insert("w", Tensor({2}, std::vector<double>{0.5, -1.0}));
  EXPECT_EQ(sgd_step(p, g, 0.1).at("w").storage(), (std::vector<double>{0.95, 2.1}));
  GradSet bad;
  bad.insert("v", Tensor({2}));
  EXPECT_THROW(sgd_step(p, bad, 0.1), Error);
}

TEST(Models, CrossEntropyAnalyticCases) {
  // Zero weights give uniform logits: loss = ln C.
  const ModelSpec spec = ModelSpec::mlp(1, 2, 2, {}, 4);
  ParamSet p = init_params(spec, 0);
  for (auto& [name, t] : p) t = Tensor(t.shape());
  EXPECT_NEAR(loss_of(spec, p, Tensor({1, 4}, 0.3), one_hot({2}, 4)), std::log(4.0), 1e-15);
  // A huge bias on the true class drives the loss to zero.
  p.at("fc0.bias")[2] = 50.0;
  EXPECT_LT(loss_of(spec, p, Tensor({1, 4}, 0.3), one_hot({2}, 4)), 1e-20);
}

TEST(Models, FinalBiasGradientIsSoftmaxMinusLabel) {
  std::mt19937_64 rng(11);
  const ModelSpec spec = ModelSpec::mlp(1, 3, 3, {5}, 4);
  const ParamSet p = init_params(spec, 5);
  const Tensor x = random_tensor({1, 9}, rng, 0.0, 1.0);
  LossGraph lg = forward_loss(spec, p, x, one_hot({3}, 4));
  Graph& g = *lg.graph;
  const Tensor probs = g.softmax(build_logits(spec, lg.params, lg.input)).value();
  const GradSet grads = true_gradients(spec, p, x, one_hot({3}, 4));
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_NEAR(grads.at("fc1.bias")[c], probs[c] - (c == 3 ? 1.0 : 0.0), 1e-14);
  }
}

TEST(Models, GradientsScaleWithLoss) {
  std::mt19937_64 rng(12);
  const ModelSpec spec = ModelSpec::mlp(1, 2, 2, {3}, 2);
  const ParamSet p = init_params(spec, 6);
  LossGraph lg = forward_loss(spec, p, random_tensor({1, 4}, rng, 0.0, 1.0), one_hot({1}, 2));
  GradResult once = lg.graph->grad(lg.loss, lg.params);
  GradResult twice = lg.graph->grad(2.0 * lg.loss, lg.params);
  for (std::size_t i = 0; i < once.grads.size(); ++i) {
    for (std::size_t j = 0; j < once.grads[i].value().size(); ++j) {
      EXPECT_EQ(twice.grads[i].value()[j], 2.0 * once.grads[i].value()[j]);
    }
  }
}

TEST(Models, InitMeanIsNearZero) {
  // 10^4 draws from U(-b, b): std error b / sqrt(3 * 10^4).
  const ModelSpec spec = ModelSpec::mlp(1, 10, 10, {100}, 2);
  const ParamSet p = init_params(spec, 7);
  const Tensor& w = p.at("fc0.weight");
  ASSERT_EQ(w.size(), 10000u);
  double mean = 0.0;
  for (double v : w.data()) mean += v / static_cast<double>(w.size());
  const double b = 1.0 / std::sqrt(100.0);
  EXPECT_LT(std::abs(mean), 3.0 * b / std::sqrt(3.0 * 10000.0));
}

TEST(Models, SgdAnalyticAndComposition) {
  ParamSet w;
  w.insert("w", Tensor({1}, 1.0));
  GradSet g;
  g.insert("w", Tensor({1}, 1.0));  // d(w^2/2)/dw at w = 1
  EXPECT_EQ(sgd_step(w, g, 0.5).at("w")[0], 0.5);
  EXPECT_EQ(sgd_step(w, g, 0.0), w);
  // k steps on w^2/2 by folding single steps equal the closed form (1-eta)^k.
  ParamSet cur = w;
  for (int k = 0; k < 5; ++k) {
    GradSet gk;
    gk.insert("w", cur.at("w"));
    cur = sgd_step(cur, gk, 0.25);
  }
  EXPECT_NEAR(cur.at("w")[0], std::pow(0.75, 5), 1e-15);
}

TEST(Models, EmbedLossesAndFiniteDifferences) {
  const ModelSpec spec = ModelSpec::embed_classifier(9, 3, 3, {4}, 2);
  const ParamSet p = init_params(spec, 8);
  const auto y = one_hot({1}, 2);
  const double a = embed_forward(spec, p, {{1, 2, 3}}, y).loss.value().item();
  const double b = embed_forward(spec, p, {{1, 2, 3}}, y).loss.value().item();
  EXPECT_EQ(a, b);
  // FD on the continuous embedded input, through the shared logits builder.
  const Tensor emb = embed_tokens(spec, p, {{1, 2, 3}});
  auto f = [&](const Tensor& v) {
    Graph g;
    std::vector<Var> vars;
    for (const auto& [name, t] : p) vars.push_back(g.leaf(name, t));
    Var x = g.leaf("x", v);
    return soft_cross_entropy(build_logits(spec, vars, x), g.constant(y)).value().item();
  };
  Graph g;
  std::vector<Var> vars;
  for (const auto& [name, t] : p) vars.push_back(g.leaf(name, t));
  Var x = g.leaf("x", emb);
  Var loss = soft_cross_entropy(build_logits(spec, vars, x), g.constant(y));
  const Tensor analytic = g.grad(loss, {x}).grads[0].value();
  EXPECT_LT(testing::max_abs_diff(analytic, testing::numeric_gradient(f, emb)), 1e-9);
}

TEST(Models, OutputsFiniteOnWideInputs) {
  std::mt19937_64 rng(13);
  const ModelSpec spec = ModelSpec::convnet(1, 6, 6, {3}, 3, {8}, 4);
  for (int trial = 0; trial < 5; ++trial) {
    const ParamSet p = init_params(spec, trial);
    const Tensor x = random_tensor({2, 36}, rng, -10.0, 10.0);
    const GradSet g = true_gradients(spec, p, x, one_hot({0, 3}, 4));
    for (const auto& [name, t] : g) EXPECT_TRUE(t.all_finite()) << name;
  }
}

}  // namespace
}  // namespace gradleak
