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

#include "fedpoison/tensor.h"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace fedpoison::nn {

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, Vec values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows_ * cols_) {
    throw std::invalid_argument("Tensor2D: value count does not match shape");
  }
}

Tensor2D Tensor2D::Identity(std::size_t n) {
  Tensor2D t(n, n);
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor2D Tensor2D::Gaussian(std::size_t rows, std::size_t cols, double stddev,
                            std::mt19937_64& rng) {
  Tensor2D t(rows, cols);
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.values_) v = dist(rng);
  return t;
}

bool Tensor2D::AllFinite() const { return nn::AllFinite(values_); }

double Dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("Dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double SquaredNorm(std::span<const double> a) { return Dot(a, a); }

double Norm(std::span<const double> a) { return std::sqrt(SquaredNorm(a)); }

void Axpy(double scale, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("Axpy: size mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += scale * x[i];
}

bool AllFinite(std::span<const double> a) {
  for (double v : a) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace fedpoison::nn
