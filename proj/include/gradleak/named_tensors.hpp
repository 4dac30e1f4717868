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

#include <string>
#include <utility>
#include <vector>

#include "gradleak/tensor.hpp"

namespace gradleak {

/// Ordered name -> Tensor collection. Iteration order is insertion order.
/// The tag keeps weights and gradients from being mixed up at compile time.
template <typename Tag>
class NamedTensors {
 public:
  using Entry = std::pair<std::string, Tensor>;

  NamedTensors() = default;

  void insert(std::string name, Tensor value) {
    if (contains(name)) throw Error("duplicate tensor name '" + name + "'");
    entries_.emplace_back(std::move(name), std::move(value));
  }

  bool contains(const std::string& name) const {
    for (const auto& e : entries_) {
      if (e.first == name) return true;
    }
    return false;
  }

  const Tensor& at(const std::string& name) const {
    for (const auto& e : entries_) {
      if (e.first == name) return e.second;
    }
    throw Error("no tensor named '" + name + "'");
  }
  Tensor& at(const std::string& name) {
    return const_cast<Tensor&>(std::as_const(*this).at(name));
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }
  Entry& operator[](std::size_t i) { return entries_[i]; }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Total scalar element count over all tensors.
  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) out.push_back(e.first);
    return out;
  }

  /// Same names, same order, same shapes.
  template <typename OtherTag>
  bool aligned_with(const NamedTensors<OtherTag>& other) const {
    if (size() != other.size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (entries_[i].first != other[i].first) return false;
      if (entries_[i].second.shape() != other[i].second.shape()) return false;
    }
    return true;
  }

  template <typename OtherTag>
  void require_aligned(const NamedTensors<OtherTag>& other, const char* what) const {
    if (!aligned_with(other)) {
      throw ShapeError(std::string(what) + ": tensor sets differ in names, order or shapes");
    }
  }

  friend bool operator==(const NamedTensors& a, const NamedTensors& b) {
    return a.entries_ == b.entries_;
  }

 private:
  std::vector<Entry> entries_;
};

struct ParamTag {};
struct GradTag {};

/// Trainable weights W, in model-defined order.
using ParamSet = NamedTensors<ParamTag>;
/// Gradients aligned with a ParamSet.
using GradSet = NamedTensors<GradTag>;

}  // namespace gradleak
