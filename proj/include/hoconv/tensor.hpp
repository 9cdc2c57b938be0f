// Copyright 2026 The hoconv Authors
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

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hoconv/error.hpp"

namespace hoconv {

struct Shape {
  std::size_t t = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t c = 0;

  std::size_t volume() const { return t * h * w * c; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Dense rank-4 array in row-major (T, H, W, C) order.
class VideoTensor {
 public:
  VideoTensor() = default;
  explicit VideoTensor(Shape shape, double fill = 0.0)
      : shape_(shape), data_(shape.volume(), fill) {}
  VideoTensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.volume())
      throw ContractError("VideoTensor: data length " + std::to_string(data_.size()) +
                          " does not match shape " + shape_.str());
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const {
    return ((t * shape_.h + y) * shape_.w + x) * shape_.c + c;
  }
  double& at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) {
    return data_[index(t, y, x, c)];
  }
  double at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const {
    return data_[index(t, y, x, c)];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool all_finite() const;
  bool operator==(const VideoTensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace hoconv
