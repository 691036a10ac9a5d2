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

#include "moegrow/tensor.hpp"

#include <cstring>
#include <sstream>

#include "moegrow/error.hpp"

namespace moegrow {

const char* ErrorKindName(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kArgument: return "argument";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kCorruption: return "corruption";
    case ErrorKind::kUnsupported: return "unsupported";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kTraining: return "training";
    case ErrorKind::kData: return "data";
    case ErrorKind::kSpec: return "spec";
  }
  return "unknown";
}

std::size_t NumElements(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string ShapeString(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<float> data, bool requires_grad)
    : shape_(std::move(shape)), requires_grad_(requires_grad) {
  MOEGROW_CHECK(NumElements(shape_) == data.size(), ErrorKind::kDimension,
                "tensor shape " + ShapeString(shape_) + " does not match " +
                    std::to_string(data.size()) + " values");
  data_ = std::make_shared<const std::vector<float>>(std::move(data));
}

Tensor Tensor::Zeros(Shape shape, bool requires_grad) {
  return Full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::Full(Shape shape, float value, bool requires_grad) {
  std::vector<float> data(NumElements(shape), value);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::Scalar(float value) { return Tensor({}, {value}); }

float Tensor::item() const {
  MOEGROW_CHECK(size() == 1, ErrorKind::kDimension,
                "item() on tensor of shape " + ShapeString(shape_));
  return (*data_)[0];
}

Tensor Tensor::WithGrad(bool requires_grad) const {
  Tensor t = *this;
  t.requires_grad_ = requires_grad;
  return t;
}

Tensor Tensor::Reshape(Shape shape) const {
  MOEGROW_CHECK(NumElements(shape) == size(), ErrorKind::kDimension,
                "cannot reshape " + ShapeString(shape_) + " to " +
                    ShapeString(shape));
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::Clone() const {
  std::vector<float> copy(data().begin(), data().end());
  return Tensor(shape_, std::move(copy), requires_grad_);
}

bool Tensor::BitEqual(const Tensor& other) const noexcept {
  if (shape_ != other.shape_ || size() != other.size()) return false;
  if (size() == 0) return true;
  return std::memcmp(data_->data(), other.data_->data(),
                     size() * sizeof(float)) == 0;
}

std::span<float> GradTape::Grad(const Tensor& t) {
  auto [it, inserted] = grads_.try_emplace(t.id());
  if (inserted) it->second.assign(t.size(), 0.0f);
  return it->second;
}

const std::vector<float>* GradTape::FindGrad(const Tensor& t) const {
  auto it = grads_.find(t.id());
  return it == grads_.end() ? nullptr : &it->second;
}

void GradTape::Backward(const Tensor& loss) {
  MOEGROW_CHECK(!consumed_, ErrorKind::kArgument, "tape already consumed");
  MOEGROW_CHECK(loss.size() == 1, ErrorKind::kDimension,
                "backward needs a scalar loss, got " +
                    ShapeString(loss.shape()));
  consumed_ = true;
  Grad(loss)[0] += 1.0f;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)(*this);
  ops_.clear();
}

}  // namespace moegrow
