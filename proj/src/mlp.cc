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

#include "fedpoison/mlp.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace fedpoison::nn {
namespace {

double Activate(Activation act, double z) {
  switch (act) {
    case Activation::kLinear:
      return z;
    case Activation::kRelu:
      return z > 0.0 ? z : 0.0;
    case Activation::kSigmoid:
      return Sigmoid(z);
  }
  return z;
}

// Derivative expressed through the pre-activation z.
double ActivationGrad(Activation act, double z) {
  switch (act) {
    case Activation::kLinear:
      return 1.0;
    case Activation::kRelu:
      return z > 0.0 ? 1.0 : 0.0;
    case Activation::kSigmoid: {
      const double s = Sigmoid(z);
      return s * (1.0 - s);
    }
  }
  return 1.0;
}

void CheckCache(const MLPParams& params, const ForwardCache& cache,
                std::size_t upstream_size) {
  const auto& layers = params.layers;
  if (cache.inputs.size() != layers.size() ||
      cache.pre.size() != layers.size()) {
    throw std::invalid_argument("MlpBackward: cache does not match params");
  }
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (cache.inputs[k].size() != layers[k].in_dim() ||
        cache.pre[k].size() != layers[k].out_dim()) {
      throw std::invalid_argument("MlpBackward: stale cache at layer " +
                                  std::to_string(k));
    }
  }
  if (upstream_size != params.output_dim()) {
    throw std::invalid_argument("MlpBackward: upstream gradient size mismatch");
  }
}

}  // namespace

double Sigmoid(double z) {
  double s;
  if (z >= 0.0) {
    s = 1.0 / (1.0 + std::exp(-z));
  } else {
    const double e = std::exp(z);
    s = e / (1.0 + e);
  }
  return std::clamp(s, std::numeric_limits<double>::denorm_min(),
                    std::nextafter(1.0, 0.0));
}

double ClampProbability(double p) {
  return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon);
}

double BinaryCrossEntropy(double p, double label) {
  const double c = ClampProbability(p);
  return -(label * std::log(c) + (1.0 - label) * std::log(1.0 - c));
}

Vec Softmax(std::span<const double> logits) {
  Vec out(logits.begin(), logits.end());
  if (out.empty()) return out;
  const double mx = *std::max_element(out.begin(), out.end());
  double sum = 0.0;
  for (double& v : out) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : out) v /= sum;
  return out;
}

MLPParams MLPParams::Gaussian(std::span<const std::size_t> dims,
                              Activation hidden, Activation output,
                              std::mt19937_64& rng, double stddev) {
  if (dims.size() < 2) {
    throw std::invalid_argument("MLPParams: need at least two dims");
  }
  MLPParams p;
  std::normal_distribution<double> dist(0.0, stddev);
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    DenseLayer layer;
    layer.weight = Tensor2D::Gaussian(dims[k + 1], dims[k], stddev, rng);
    layer.bias.resize(dims[k + 1]);
    for (double& b : layer.bias) b = dist(rng);
    layer.activation = (k + 2 == dims.size()) ? output : hidden;
    p.layers.push_back(std::move(layer));
  }
  return p;
}

MLPParams MLPParams::HeGaussian(std::span<const std::size_t> dims,
                                Activation hidden, Activation output,
                                std::mt19937_64& rng) {
  if (dims.size() < 2) {
    throw std::invalid_argument("MLPParams: need at least two dims");
  }
  MLPParams p;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    DenseLayer layer;
    const double stddev = std::sqrt(2.0 / static_cast<double>(dims[k]));
    layer.weight = Tensor2D::Gaussian(dims[k + 1], dims[k], stddev, rng);
    layer.bias.assign(dims[k + 1], 0.0);
    layer.activation = (k + 2 == dims.size()) ? output : hidden;
    p.layers.push_back(std::move(layer));
  }
  return p;
}

std::size_t MLPParams::input_dim() const {
  return layers.empty() ? 0 : layers.front().in_dim();
}

std::size_t MLPParams::output_dim() const {
  return layers.empty() ? 0 : layers.back().out_dim();
}

std::size_t MLPParams::ParameterCount() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

void MLPParams::Validate() const {
  if (layers.empty()) throw std::invalid_argument("MLPParams: no layers");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& l = layers[k];
    if (l.bias.size() != l.out_dim()) {
      throw std::invalid_argument("MLPParams: bias size mismatch at layer " +
                                  std::to_string(k));
    }
    if (k > 0 && layers[k - 1].out_dim() != l.in_dim()) {
      throw std::invalid_argument("MLPParams: layer " + std::to_string(k) +
                                  " does not chain with its predecessor");
    }
  }
}

bool MLPParams::AllFinite() const {
  for (const auto& l : layers) {
    if (!l.weight.AllFinite() || !nn::AllFinite(l.bias)) return false;
  }
  return true;
}

MLPGrads MLPGrads::ZerosLike(const MLPParams& params) {
  MLPGrads g;
  g.layers.reserve(params.layers.size());
  for (const auto& l : params.layers) {
    g.layers.push_back(
        {Tensor2D(l.weight.rows(), l.weight.cols()), Vec(l.bias.size(), 0.0)});
  }
  return g;
}

bool MLPGrads::Matches(const MLPParams& params) const {
  if (layers.size() != params.layers.size()) return false;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (!layers[k].weight.SameShape(params.layers[k].weight) ||
        layers[k].bias.size() != params.layers[k].bias.size()) {
      return false;
    }
  }
  return true;
}

void MLPGrads::Scale(double factor) {
  for (auto& l : layers) {
    for (double& v : l.weight.values()) v *= factor;
    for (double& v : l.bias) v *= factor;
  }
}

void MLPGrads::AddScaled(const MLPGrads& other, double factor) {
  if (other.layers.size() != layers.size()) {
    throw std::invalid_argument("MLPGrads: layer count mismatch");
  }
  for (std::size_t k = 0; k < layers.size(); ++k) {
    Axpy(factor, other.layers[k].weight.values(), layers[k].weight.values());
    Axpy(factor, other.layers[k].bias, layers[k].bias);
  }
}

bool MLPGrads::AllFinite() const {
  for (const auto& l : layers) {
    if (!l.weight.AllFinite() || !nn::AllFinite(l.bias)) return false;
  }
  return true;
}

Vec MlpForward(const MLPParams& params, std::span<const double> input,
               ForwardCache* cache) {
  if (params.layers.empty() || input.size() != params.input_dim()) {
    throw std::invalid_argument("MlpForward: input dimension mismatch");
  }
  if (cache != nullptr) {
    cache->inputs.resize(params.layers.size());
    cache->pre.resize(params.layers.size());
  }
  Vec x(input.begin(), input.end());
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    const DenseLayer& l = params.layers[k];
    const std::size_t in = l.in_dim();
    const std::size_t out = l.out_dim();
    Vec z(out);
    const double* w = l.weight.values().data();
    for (std::size_t i = 0; i < out; ++i) {
      double s = l.bias[i];
      const double* wi = w + i * in;
      for (std::size_t j = 0; j < in; ++j) s += wi[j] * x[j];
      z[i] = s;
    }
    Vec y(out);
    for (std::size_t i = 0; i < out; ++i) y[i] = Activate(l.activation, z[i]);
    if (cache != nullptr) {
      cache->inputs[k] = std::move(x);
      cache->pre[k] = std::move(z);
    }
    x = std::move(y);
  }
  if (cache != nullptr) cache->output = x;
  return x;
}

Vec MlpBackwardAccumulate(const MLPParams& params, const ForwardCache& cache,
                          std::span<const double> upstream, MLPGrads& accum) {
  CheckCache(params, cache, upstream.size());
  if (!accum.Matches(params)) {
    throw std::invalid_argument("MlpBackward: gradient shapes do not match");
  }
  Vec g(upstream.begin(), upstream.end());
  for (std::size_t k = params.layers.size(); k-- > 0;) {
    const DenseLayer& l = params.layers[k];
    const std::size_t in = l.in_dim();
    const std::size_t out = l.out_dim();
    const Vec& z = cache.pre[k];
    const Vec& x = cache.inputs[k];
    for (std::size_t i = 0; i < out; ++i) g[i] *= ActivationGrad(l.activation, z[i]);
    LayerGrads& lg = accum.layers[k];
    double* gw = lg.weight.values().data();
    const double* w = l.weight.values().data();
    Vec gx(in, 0.0);
    for (std::size_t i = 0; i < out; ++i) {
      const double gi = g[i];
      lg.bias[i] += gi;
      if (gi == 0.0) continue;
      double* gwi = gw + i * in;
      const double* wi = w + i * in;
      for (std::size_t j = 0; j < in; ++j) {
        gwi[j] += gi * x[j];
        gx[j] += gi * wi[j];
      }
    }
    g = std::move(gx);
  }
  return g;
}

BackwardResult MlpBackward(const MLPParams& params, const ForwardCache& cache,
                           std::span<const double> upstream) {
  BackwardResult r{MLPGrads::ZerosLike(params), {}};
  r.input_grad = MlpBackwardAccumulate(params, cache, upstream, r.grads);
  return r;
}

void SgdApply(MLPParams& params, const MLPGrads& grads, double lr) {
  if (!grads.Matches(params)) {
    throw std::invalid_argument("SgdApply: gradient shapes do not match");
  }
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    Axpy(-lr, grads.layers[k].weight.values(),
         params.layers[k].weight.values());
    Axpy(-lr, grads.layers[k].bias, params.layers[k].bias);
  }
}

void AppendFlat(const MLPParams& params, Vec& out) {
  for (const auto& l : params.layers) {
    out.insert(out.end(), l.weight.values().begin(), l.weight.values().end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
}

void AppendFlat(const MLPGrads& grads, Vec& out) {
  for (const auto& l : grads.layers) {
    out.insert(out.end(), l.weight.values().begin(), l.weight.values().end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
}

Vec Flatten(const MLPParams& params) {
  Vec out;
  out.reserve(params.ParameterCount());
  AppendFlat(params, out);
  return out;
}

Vec Flatten(const MLPGrads& grads) {
  Vec out;
  AppendFlat(grads, out);
  return out;
}

namespace {

template <typename Layers>
std::size_t AssignLayers(std::span<const double> flat, std::size_t offset,
                         Layers& layers) {
  for (auto& l : layers) {
    auto& w = l.weight.values();
    if (offset + w.size() + l.bias.size() > flat.size()) {
      throw std::invalid_argument("AssignFlat: flat vector too short");
    }
    std::copy_n(flat.begin() + offset, w.size(), w.begin());
    offset += w.size();
    std::copy_n(flat.begin() + offset, l.bias.size(), l.bias.begin());
    offset += l.bias.size();
  }
  return offset;
}

}  // namespace

std::size_t AssignFlat(std::span<const double> flat, std::size_t offset,
                       MLPParams& params) {
  return AssignLayers(flat, offset, params.layers);
}

std::size_t AssignFlat(std::span<const double> flat, std::size_t offset,
                       MLPGrads& grads) {
  return AssignLayers(flat, offset, grads.layers);
}

double FiniteDiffCheck(std::span<double> params,
                       std::span<const double> analytic,
                       const std::function<double()>& loss, double step) {
  if (!(step > 0.0) || !std::isfinite(step)) {
    throw std::invalid_argument("FiniteDiffCheck: step must be positive");
  }
  if (params.size() != analytic.size()) {
    throw std::invalid_argument("FiniteDiffCheck: gradient size mismatch");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + step;
    const double up = loss();
    params[i] = saved - step;
    const double down = loss();
    params[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      return std::numeric_limits<double>::infinity();
    }
    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic[i];
    const double denom =
        std::max({std::abs(a), std::abs(numeric), kFiniteDiffFloor});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace fedpoison::nn
