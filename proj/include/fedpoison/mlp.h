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

#ifndef FEDPOISON_MLP_H_
#define FEDPOISON_MLP_H_

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "fedpoison/tensor.h"

namespace fedpoison::nn {

// Probabilities are clamped to [kProbEpsilon, 1 - kProbEpsilon] before logs.
inline constexpr double kProbEpsilon = 1e-7;
// Denominator floor of the finite-difference relative error; below it the
// comparison is effectively absolute.
inline constexpr double kFiniteDiffFloor = 1e-6;

enum class Activation { kLinear, kRelu, kSigmoid };

double Sigmoid(double z);
double ClampProbability(double p);
// -[label * log p + (1 - label) * log(1 - p)] on the clamped probability.
double BinaryCrossEntropy(double p, double label);
Vec Softmax(std::span<const double> logits);

// y = act(W x + b), W has shape (out, in).
struct DenseLayer {
  Tensor2D weight;
  Vec bias;
  Activation activation = Activation::kRelu;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct MLPParams {
  std::vector<DenseLayer> layers;

  // Builds layers dims[0] -> dims[1] -> ... with `hidden` on every layer but
  // the last, which uses `output`.
  static MLPParams Gaussian(std::span<const std::size_t> dims,
                            Activation hidden, Activation output,
                            std::mt19937_64& rng, double stddev);
  // He-scaled Gaussian: stddev sqrt(2 / fan_in) per layer, zero biases.
  static MLPParams HeGaussian(std::span<const std::size_t> dims,
                              Activation hidden, Activation output,
                              std::mt19937_64& rng);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t ParameterCount() const;
  // Throws std::invalid_argument when layer dims do not chain.
  void Validate() const;
  bool AllFinite() const;

  friend bool operator==(const MLPParams&, const MLPParams&) = default;
};

// Gradient tensors, one (weight, bias) pair per layer of an MLPParams.
struct LayerGrads {
  Tensor2D weight;
  Vec bias;
  friend bool operator==(const LayerGrads&, const LayerGrads&) = default;
};

struct MLPGrads {
  std::vector<LayerGrads> layers;

  static MLPGrads ZerosLike(const MLPParams& params);
  bool Matches(const MLPParams& params) const;
  void Scale(double factor);
  void AddScaled(const MLPGrads& other, double factor);
  bool AllFinite() const;
  friend bool operator==(const MLPGrads&, const MLPGrads&) = default;
};

// Per-layer activations retained by MlpForward for MlpBackward.
struct ForwardCache {
  std::vector<Vec> inputs;  // input to layer k
  std::vector<Vec> pre;     // pre-activation of layer k
  Vec output;
};

Vec MlpForward(const MLPParams& params, std::span<const double> input,
               ForwardCache* cache = nullptr);

struct BackwardResult {
  MLPGrads grads;
  Vec input_grad;
};

// Exact gradients of <upstream, output> w.r.t. every parameter and the input.
BackwardResult MlpBackward(const MLPParams& params, const ForwardCache& cache,
                           std::span<const double> upstream);
// Same, but adds parameter gradients into `accum` (which must match params).
Vec MlpBackwardAccumulate(const MLPParams& params, const ForwardCache& cache,
                          std::span<const double> upstream, MLPGrads& accum);

// params -= lr * grads
void SgdApply(MLPParams& params, const MLPGrads& grads, double lr);

// Flat views in layer order (weight then bias per layer).
Vec Flatten(const MLPParams& params);
Vec Flatten(const MLPGrads& grads);
void AppendFlat(const MLPParams& params, Vec& out);
void AppendFlat(const MLPGrads& grads, Vec& out);
// Reads ParameterCount() values starting at `offset`; returns the new offset.
std::size_t AssignFlat(std::span<const double> flat, std::size_t offset,
                       MLPParams& params);
std::size_t AssignFlat(std::span<const double> flat, std::size_t offset,
                       MLPGrads& grads);

// Central-difference check of `analytic` against `loss` evaluated while each
// entry of `params` is perturbed by +/- step in place (restored afterwards).
// Returns max |a - n| / max(|a|, |n|, kFiniteDiffFloor); +inf if any loss is
// non-finite.
double FiniteDiffCheck(std::span<double> params,
                       std::span<const double> analytic,
                       const std::function<double()>& loss, double step);

}  // namespace fedpoison::nn

#endif  // FEDPOISON_MLP_H_
