/* Copyright 2026 The skillneo Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "skillneo/errors.hpp"

namespace skillneo::model {

/// Dense row-major tensor with a registry name.
template <typename T>
struct TensorT {
  std::string name;
  std::vector<int> shape;
  std::vector<T> data;

  TensorT() = default;
  TensorT(std::string n, std::vector<int> s)
      : name(std::move(n)), shape(std::move(s)), data(count(shape), T(0)) {}

  static std::size_t count(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
  }
  std::size_t numel() const { return data.size(); }
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  T* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols(); }
  const T* row(int r) const {
    return data.data() + static_cast<std::size_t>(r) * cols();
  }
};

/// Ordered collection of uniquely named tensors.
template <typename T>
class ParamSetT {
 public:
  int add(std::string name, std::vector<int> shape) {
    if (index_.count(name)) throw ConfigError("duplicate tensor name " + name);
    index_[name] = static_cast<int>(tensors_.size());
    tensors_.emplace_back(std::move(name), std::move(shape));
    return static_cast<int>(tensors_.size()) - 1;
  }
  int index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no tensor named " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  TensorT<T>& operator[](int i) { return tensors_[static_cast<std::size_t>(i)]; }
  const TensorT<T>& operator[](int i) const {
    return tensors_[static_cast<std::size_t>(i)];
  }
  TensorT<T>& at(const std::string& name) { return (*this)[index_of(name)]; }
  const TensorT<T>& at(const std::string& name) const {
    return (*this)[index_of(name)];
  }

  std::size_t size() const { return tensors_.size(); }
  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
  }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  /// Same names and shapes, all zeros.
  ParamSetT zeros_like() const {
    ParamSetT out;
    for (const auto& t : tensors_) out.add(t.name, t.shape);
    return out;
  }
  void zero() {
    for (auto& t : tensors_) std::fill(t.data.begin(), t.data.end(), T(0));
  }

  template <typename U>
  ParamSetT<U> cast() const {
    ParamSetT<U> out;
    for (const auto& t : tensors_) {
      const int i = out.add(t.name, t.shape);
      std::copy(t.data.begin(), t.data.end(), out[i].data.begin());
    }
    return out;
  }

 private:
  std::vector<TensorT<T>> tensors_;
  std::unordered_map<std::string, int> index_;
};

using Tensor = TensorT<float>;
using ParamSet = ParamSetT<float>;

}  // namespace skillneo::model
