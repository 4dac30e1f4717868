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

// Small twice-differentiable classifiers (sigmoid activations, stride-1
// convolutions, no max-pooling) and the soft-label cross-entropy used by both
// honest workers and the attacker.

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gradleak/autodiff.hpp"
#include "gradleak/named_tensors.hpp"
#include "gradleak/rng.hpp"

namespace gradleak {

enum class ModelKind { kMlp, kConvNet, kEmbedClassifier };

inline std::string_view model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::kMlp: return "mlp";
    case ModelKind::kConvNet: return "convnet";
    case ModelKind::kEmbedClassifier: return "embed";
  }
  return "?";
}

struct ModelSpec {
  ModelKind kind = ModelKind::kMlp;
  // Image input (mlp, convnet).
  std::size_t channels = 1;
  std::size_t height = 8;
  std::size_t width = 8;
  // Convolution stack (convnet): output channels per layer, square kernel.
  std::vector<std::size_t> conv_channels;
  std::size_t kernel = 3;
  bool same_padding = true;
  // Dense hidden widths; the final dense layer maps to `classes`.
  std::vector<std::size_t> hidden;
  std::size_t classes = 4;
  // Token input (embed classifier).
  std::size_t vocab = 0;
  std::size_t embed_dim = 0;
  std::size_t seq_len = 0;

  static ModelSpec mlp(std::size_t channels, std::size_t height, std::size_t width,
                       std::vector<std::size_t> hidden, std::size_t classes) {
    ModelSpec s;
    s.kind = ModelKind::kMlp;
    s.channels = channels;
    s.height = height;
    s.width = width;
    s.hidden = std::move(hidden);
    s.classes = classes;
    return s;
  }

  static ModelSpec convnet(std::size_t channels, std::size_t height, std::size_t width,
                           std::vector<std::size_t> conv_channels, std::size_t kernel,
                           std::vector<std::size_t> hidden, std::size_t classes) {
    ModelSpec s = mlp(channels, height, width, std::move(hidden), classes);
    s.kind = ModelKind::kConvNet;
    s.conv_channels = std::move(conv_channels);
    s.kernel = kernel;
    return s;
  }

  static ModelSpec embed_classifier(std::size_t vocab, std::size_t embed_dim, std::size_t seq_len,
                                    std::vector<std::size_t> hidden, std::size_t classes) {
    ModelSpec s;
    s.kind = ModelKind::kEmbedClassifier;
    s.vocab = vocab;
    s.embed_dim = embed_dim;
    s.seq_len = seq_len;
    s.hidden = std::move(hidden);
    s.classes = classes;
    return s;
  }

  void validate() const {
    auto bad = [](const std::string& what) { throw Error("invalid model spec: " + what); };
    if (classes < 2) bad("need at least 2 classes");
    for (std::size_t w : hidden) {
      if (w == 0) bad("zero-width hidden layer");
    }
    switch (kind) {
      case ModelKind::kEmbedClassifier:
        if (vocab == 0 || embed_dim == 0 || seq_len == 0) bad("embed classifier needs vocab, embed_dim, seq_len");
        break;
      case ModelKind::kConvNet:
        if (conv_channels.empty()) bad("convnet needs at least one conv layer");
        if (kernel == 0) bad("zero kernel");
        if (same_padding && kernel % 2 == 0) bad("same padding needs an odd kernel");
        for (std::size_t c : conv_channels) {
          if (c == 0) bad("zero conv channels");
        }
        [[fallthrough]];
      case ModelKind::kMlp:
        if (channels == 0 || height == 0 || width == 0) bad("empty image shape");
        break;
    }
    if (kind == ModelKind::kConvNet && !same_padding) {
      const std::size_t shrink = conv_channels.size() * (kernel - 1);
      if (height <= shrink || width <= shrink) bad("valid convolutions shrink the image to nothing");
    }
  }

  std::size_t conv_pad() const { return same_padding ? (kernel - 1) / 2 : 0; }

  /// Per-sample size of the continuous model input: pixels, or the embedded
  /// sentence (seq_len * embed_dim) for the embed classifier.
  std::size_t input_size() const {
    if (kind == ModelKind::kEmbedClassifier) return seq_len * embed_dim;
    return channels * height * width;
  }

  /// Per-sample image shape (C, H, W); empty for the embed classifier.
  Shape image_shape() const {
    if (kind == ModelKind::kEmbedClassifier) return {};
    return {channels, height, width};
  }
};

struct ParamShape {
  std::string name;
  Shape shape;
  std::size_t fan_in;
};

/// Names, shapes and fan-ins of every trainable tensor, in canonical order.
inline std::vector<ParamShape> param_layout(const ModelSpec& spec) {
  spec.validate();
  std::vector<ParamShape> out;
  std::size_t features = 0;
  if (spec.kind == ModelKind::kEmbedClassifier) {
    out.push_back({"embed.weight", {spec.vocab, spec.embed_dim}, 1});
    features = spec.seq_len * spec.embed_dim;
  } else {
    std::size_t c = spec.channels, h = spec.height, w = spec.width;
    if (spec.kind == ModelKind::kConvNet) {
      for (std::size_t i = 0; i < spec.conv_channels.size(); ++i) {
        const std::size_t o = spec.conv_channels[i];
        const std::string p = "conv" + std::to_string(i);
        out.push_back({p + ".weight", {o, c, spec.kernel, spec.kernel}, c * spec.kernel * spec.kernel});
        out.push_back({p + ".bias", {o, 1, 1}, c * spec.kernel * spec.kernel});
        c = o;
        if (!spec.same_padding) {
          h -= spec.kernel - 1;
          w -= spec.kernel - 1;
        }
      }
    }
    features = c * h * w;
  }
  std::vector<std::size_t> widths = spec.hidden;
  widths.push_back(spec.classes);
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const std::string p = "fc" + std::to_string(i);
    out.push_back({p + ".weight", {features, widths[i]}, features});
    out.push_back({p + ".bias", {widths[i]}, features});
    features = widths[i];
  }
  return out;
}

/// Parameters that sit before the continuous input (the embedding matrix).
/// An attacker optimizing in embedding space cannot form their gradients.
inline bool is_input_side_param(const std::string& name) { return name == "embed.weight"; }

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every tensor, biases included.
inline ParamSet init_params(const ModelSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "init"));
  ParamSet params;
  for (const auto& p : param_layout(spec)) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(p.fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(p.shape);
    for (double& v : t.storage()) v = dist(rng);
    params.insert(p.name, std::move(t));
  }
  return params;
}

/// Builds logits [N, classes] for flat input x [N, input_size]. `params` are
/// graph nodes aligned with param_layout(spec); input-side params are skipped.
inline Var build_logits(const ModelSpec& spec, std::span<const Var> params, Var x) {
  Graph& g = *x.graph();
  const std::size_t n = x.shape().at(0);
  std::size_t next = 0;
  if (spec.kind == ModelKind::kEmbedClassifier) ++next;
  Var h = x;
  if (spec.kind == ModelKind::kConvNet) {
    h = g.reshape(h, {n, spec.channels, spec.height, spec.width});
    for (std::size_t i = 0; i < spec.conv_channels.size(); ++i) {
      Var w = params[next++];
      Var b = params[next++];
      h = g.conv2d(h, w, spec.conv_pad());
      h = g.sigmoid(g.add(h, g.broadcast(b, h.shape())));
    }
    h = g.reshape(h, {n, h.value().size() / n});
  }
  const std::size_t dense = spec.hidden.size() + 1;
  for (std::size_t i = 0; i < dense; ++i) {
    Var w = params[next++];
    Var b = params[next++];
    h = g.matmul(h, w);
    h = g.add(h, g.broadcast(b, h.shape()));
    if (i + 1 < dense) h = g.sigmoid(h);
  }
  return h;
}

/// -(1/N) sum_i sum_c y_ic log softmax(z_i)_c, for soft or one-hot labels.
inline Var soft_cross_entropy(Var logits, Var probs) {
  Graph& g = *logits.graph();
  const double n = static_cast<double>(logits.shape().at(0));
  Var ll = g.mul(probs, g.log(g.softmax(logits)));
  return g.scalar_mul(g.sum(ll), -1.0 / n);
}

inline void check_label_rows(const Tensor& y, std::size_t n, std::size_t classes) {
  if (y.shape() != Shape{n, classes}) {
    throw ShapeError("labels must have shape " + shape_str({n, classes}) + ", got " +
                     shape_str(y.shape()));
  }
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double v = y[r * classes + c];
      if (v < 0.0) throw Error("label row " + std::to_string(r) + " has a negative entry");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9) {
      throw Error("label row " + std::to_string(r) + " sums to " + std::to_string(s) +
                  ", expected 1");
    }
  }
}

/// A loss expression in its own graph together with the handles needed to
/// differentiate it.
struct LossGraph {
  std::unique_ptr<Graph> graph = std::make_unique<Graph>();
  Var loss;
  Var input;     // flat model input [N, input_size]
  Var labels;    // [N, classes]
  Var embedded;  // embed classifier only: embedded sentences [N, seq_len*embed_dim]
  std::vector<Var> params;
};

namespace detail {

inline std::vector<Var> param_leaves(Graph& g, const ModelSpec& spec, const ParamSet& params) {
  const auto layout = param_layout(spec);
  if (layout.size() != params.size()) throw ShapeError("parameter set does not match model spec");
  std::vector<Var> vars;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (params[i].first != layout[i].name || params[i].second.shape() != layout[i].shape) {
      throw ShapeError("parameter '" + params[i].first + "' does not match model spec entry '" +
                       layout[i].name + "' " + shape_str(layout[i].shape));
    }
    vars.push_back(g.leaf(params[i].first, params[i].second));
  }
  return vars;
}

}  // namespace detail

/// Mean soft-label cross-entropy of the model on (x, y_onehot). x may be
/// given flat [N, input_size] or with any trailing shape of that size.
inline LossGraph forward_loss(const ModelSpec& spec, const ParamSet& params, const Tensor& x,
                              const Tensor& y_onehot) {
  if (spec.kind == ModelKind::kEmbedClassifier) {
    throw Error("forward_loss: embed classifier takes token ids, use embed_forward");
  }
  if (x.rank() < 1) throw ShapeError("input needs a batch dimension");
  const std::size_t n = x.dim(0);
  if (x.size() != n * spec.input_size()) {
    throw ShapeError("input shape " + shape_str(x.shape()) + " does not match model input size " +
                     std::to_string(spec.input_size()));
  }
  check_label_rows(y_onehot, n, spec.classes);
  LossGraph lg;
  Graph& g = *lg.graph;
  lg.params = detail::param_leaves(g, spec, params);
  lg.input = g.leaf("x", x.reshaped({n, spec.input_size()}));
  lg.labels = g.leaf("y", y_onehot);
  lg.loss = soft_cross_entropy(build_logits(spec, lg.params, lg.input), lg.labels);
  return lg;
}

/// One-hot matrix [N*seq_len, vocab] for a batch of sentences.
inline Tensor one_hot_tokens(const std::vector<std::vector<std::size_t>>& sentences,
                             std::size_t seq_len, std::size_t vocab) {
  Tensor t({sentences.size() * seq_len, vocab});
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    if (sentences[s].size() != seq_len) {
      throw ShapeError("sentence " + std::to_string(s) + " has length " +
                       std::to_string(sentences[s].size()) + ", expected " + std::to_string(seq_len));
    }
    for (std::size_t p = 0; p < seq_len; ++p) {
      const std::size_t id = sentences[s][p];
      if (id >= vocab) {
        throw Error("token id " + std::to_string(id) + " out of range (vocab " +
                    std::to_string(vocab) + ")");
      }
      t[(s * seq_len + p) * vocab + id] = 1.0;
    }
  }
  return t;
}

/// Loss of the embed classifier on token ids. The embedding lookup is a
/// one-hot matmul, so only rows of tokens present receive gradient.
inline LossGraph embed_forward(const ModelSpec& spec, const ParamSet& params,
                               const std::vector<std::vector<std::size_t>>& sentences,
                               const Tensor& y_onehot) {
  if (spec.kind != ModelKind::kEmbedClassifier) throw Error("embed_forward needs an embed classifier spec");
  if (sentences.empty()) throw ShapeError("empty sentence batch");
  const std::size_t n = sentences.size();
  check_label_rows(y_onehot, n, spec.classes);
  Tensor onehot = one_hot_tokens(sentences, spec.seq_len, spec.vocab);
  LossGraph lg;
  Graph& g = *lg.graph;
  lg.params = detail::param_leaves(g, spec, params);
  lg.input = g.constant(std::move(onehot));
  lg.labels = g.leaf("y", y_onehot);
  lg.embedded = g.reshape(g.matmul(lg.input, lg.params[0]), {n, spec.input_size()});
  lg.loss = soft_cross_entropy(build_logits(spec, lg.params, lg.embedded), lg.labels);
  return lg;
}

/// Embedded sentences [N, seq_len*embed_dim] under the current embedding matrix.
inline Tensor embed_tokens(const ModelSpec& spec, const ParamSet& params,
                           const std::vector<std::vector<std::size_t>>& sentences) {
  const Tensor& table = params.at("embed.weight");
  Tensor out({sentences.size(), spec.input_size()});
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    for (std::size_t p = 0; p < spec.seq_len; ++p) {
      const std::size_t id = sentences[s].at(p);
      if (id >= spec.vocab) throw Error("token id " + std::to_string(id) + " out of range");
      for (std::size_t e = 0; e < spec.embed_dim; ++e) {
        out[s * spec.input_size() + p * spec.embed_dim + e] = table[id * spec.embed_dim + e];
      }
    }
  }
  return out;
}

inline GradSet gradients_of(LossGraph& lg, const std::vector<std::string>& names) {
  GradResult r = lg.graph->grad(lg.loss, lg.params);
  GradSet out;
  for (std::size_t i = 0; i < names.size(); ++i) out.insert(names[i], r.grads[i].value());
  return out;
}

/// Detached gradients of every trainable parameter.
inline GradSet true_gradients(const ModelSpec& spec, const ParamSet& params, const Tensor& x,
                              const Tensor& y_onehot) {
  LossGraph lg = forward_loss(spec, params, x, y_onehot);
  return gradients_of(lg, params.names());
}

inline GradSet true_gradients(const ModelSpec& spec, const ParamSet& params,
                              const std::vector<std::vector<std::size_t>>& sentences,
                              const Tensor& y_onehot) {
  LossGraph lg = embed_forward(spec, params, sentences, y_onehot);
  return gradients_of(lg, params.names());
}

/// A labeled minibatch of continuous inputs.
struct Batch {
  Tensor x;  // [N, input_size]
  Tensor y;  // [N, classes], rows sum to 1
};

/// W - lr * grad, elementwise. Returns a new set.
inline ParamSet sgd_step(const ParamSet& params, const GradSet& grads, double lr) {
  if (!(lr >= 0.0)) throw Error("sgd_step: learning rate must be nonnegative");
  params.require_aligned(grads, "sgd_step");
  ParamSet out = params;
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto w = out[i].second.data();
    auto g = grads[i].second.data();
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * g[j];
  }
  return out;
}

/// One-hot label matrix [N, classes].
inline Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t classes) {
  Tensor t({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw Error("label " + std::to_string(labels[i]) + " out of range");
    t[i * classes + labels[i]] = 1.0;
  }
  return t;
}

}  // namespace gradleak
