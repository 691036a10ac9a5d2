/*
 * Copyright (c) 2026 The moegrow Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace moegrow {

using Shape = std::vector<std::size_t>;

std::size_t NumElements(const Shape& shape) noexcept;
std::string ShapeString(const Shape& shape);

/// Immutable dense float32 tensor, row-major. Copies share storage; every op
/// produces a fresh buffer, so a Tensor never changes after construction.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<float> data, bool requires_grad = false);

  static Tensor Zeros(Shape shape, bool requires_grad = false);
  static Tensor Full(Shape shape, float value, bool requires_grad = false);
  static Tensor Scalar(float value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_ ? data_->size() : 0; }
  bool defined() const noexcept { return data_ != nullptr; }

  std::span<const float> data() const noexcept {
    return data_ ? std::span<const float>(*data_) : std::span<const float>();
  }
  float operator[](std::size_t i) const { return (*data_)[i]; }
  float item() const;

  bool requires_grad() const noexcept { return requires_grad_; }
  /// Same storage, tracked (or not) as a leaf.
  Tensor WithGrad(bool requires_grad) const;
  Tensor Reshape(Shape shape) const;
  /// Bit-identical copy with its own storage.
  Tensor Clone() const;

  /// Storage identity, used by the tape to key gradients.
  const void* id() const noexcept { return data_.get(); }

  bool BitEqual(const Tensor& other) const noexcept;

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<float>> data_;
  bool requires_grad_ = false;
};

/// Linear record of executed differentiable ops. Backward replays the record
/// in reverse, visiting each entry exactly once, and accumulates gradients
/// keyed by tensor storage.
class GradTape {
 public:
  using BackwardFn = std::function<void(GradTape&)>;

  void Record(BackwardFn fn) { ops_.push_back(std::move(fn)); }
  std::size_t size() const noexcept { return ops_.size(); }

  /// Mutable gradient buffer for `t`, zero-initialised on first use.
  std::span<float> Grad(const Tensor& t);
  /// Gradient accumulated for `t`, or nullptr when none reached it.
  const std::vector<float>* FindGrad(const Tensor& t) const;

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded op once, newest first.
  /// The tape is consumed; a second call is an argument error.
  void Backward(const Tensor& loss);

 private:
  std::vector<BackwardFn> ops_;
  std::unordered_map<const void*, std::vector<float>> grads_;
  bool consumed_ = false;
};

}  // namespace moegrow
