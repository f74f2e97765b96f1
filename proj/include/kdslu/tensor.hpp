// Copyright (c) kdslu authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef KDSLU_TENSOR_HPP
#define KDSLU_TENSOR_HPP

#include <algorithm>
#include <numeric>
#include <vector>

#include "kdslu/common.hpp"

namespace kdslu {

// Dense row-major tensor of doubles, rank 1..4. Double precision everywhere:
// the test suite drives every loss through finite differences and the training
// runs are small enough that float buys nothing.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    KDSLU_CHECK(!shape_.empty() && shape_.size() <= 4, ErrorKind::ShapeError,
                "tensor rank must be 1..4");
    size_t n = 1;
    for (int d : shape_) {
      KDSLU_CHECK(d >= 1, ErrorKind::ShapeError, "tensor dims must be >= 1");
      n *= static_cast<size_t>(d);
    }
    data_.assign(n, 0.0);
  }

  static Tensor scalar(double v) {
    Tensor t({1});
    t.data_[0] = v;
    return t;
  }

  static Tensor from_rows(int rows, int cols, const std::vector<double>& v) {
    Tensor t({rows, cols});
    KDSLU_CHECK(v.size() == t.data_.size(), ErrorKind::ShapeError, "from_rows size mismatch");
    t.data_ = v;
    return t;
  }

  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  const std::vector<int>& shape() const { return shape_; }
  size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }

  double& at(int r, int c) { return data_[static_cast<size_t>(r) * shape_[1] + c]; }
  double at(int r, int c) const { return data_[static_cast<size_t>(r) * shape_[1] + c]; }

  double& at(int a, int b, int c) {
    return data_[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
  }
  double at(int a, int b, int c) const {
    return data_[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
  }

  double& at(int a, int b, int c, int d) {
    return data_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }
  double at(int a, int b, int c, int d) const {
    return data_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  void fill_gaussian(Rng& rng, double stddev) {
    for (double& x : data_) x = rng.gaussian() * stddev;
  }

  void fill_uniform(Rng& rng, double lo, double hi) {
    for (double& x : data_) x = rng.uniform(lo, hi);
  }

  bool all_finite() const {
    for (double x : data_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

  uint64_t checksum(uint64_t h = 0xcbf29ce484222325ULL) const {
    h = fnv1a(data_, h);
    for (int d : shape_) h = fnv1a(&d, sizeof(d), h);
    return h;
  }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

}  // namespace kdslu

#endif  // KDSLU_TENSOR_HPP
