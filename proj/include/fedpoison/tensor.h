// Copyright 2026 The FedPoison Authors
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

#ifndef FEDPOISON_TENSOR_H_
#define FEDPOISON_TENSOR_H_

#include <cstddef>
#include <random>
#include <span>
#include <vector>

namespace fedpoison::nn {

using Vec = std::vector<double>;

// Dense row-major matrix of doubles.
class Tensor2D {
 public:
  Tensor2D() = default;
  Tensor2D(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  Tensor2D(std::size_t rows, std::size_t cols, Vec values);

  static Tensor2D Identity(std::size_t n);
  static Tensor2D Gaussian(std::size_t rows, std::size_t cols, double stddev,
                           std::mt19937_64& rng);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }

  double& at(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const {
    return values_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) {
    return {values_.data() + r * cols_, cols_};
  }
  std::span<const double> row(std::size_t r) const {
    return {values_.data() + r * cols_, cols_};
  }

  Vec& values() { return values_; }
  const Vec& values() const { return values_; }

  bool SameShape(const Tensor2D& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool AllFinite() const;

  friend bool operator==(const Tensor2D&, const Tensor2D&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vec values_;
};

double Dot(std::span<const double> a, std::span<const double> b);
double SquaredNorm(std::span<const double> a);
double Norm(std::span<const double> a);
// y += scale * x
void Axpy(double scale, std::span<const double> x, std::span<double> y);
bool AllFinite(std::span<const double> a);

}  // namespace fedpoison::nn

#endif  // FEDPOISON_TENSOR_H_
