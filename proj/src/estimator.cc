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

#include "fedpoison/estimator.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <utility>

#include "fedpoison/rng.h"

namespace fedpoison::attack {

PopularityEstimator::PopularityEstimator(nn::MLPParams net, Vec mean,
                                         Vec inv_std)
    : net_(std::move(net)), mean_(std::move(mean)), inv_std_(std::move(inv_std)) {
  net_.Validate();
  if (mean_.size() != net_.input_dim() || inv_std_.size() != net_.input_dim()) {
    throw std::invalid_argument("PopularityEstimator: standardizer size");
  }
}

nn::MLPParams& PopularityEstimator::mutable_net() {
  if (frozen_) throw std::logic_error("PopularityEstimator is frozen");
  return net_;
}

Vec PopularityEstimator::Standardize(std::span<const double> embedding) const {
  if (embedding.size() != mean_.size()) {
    throw std::invalid_argument("PopularityEstimator: embedding size mismatch");
  }
  Vec x(embedding.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    x[k] = (embedding[k] - mean_[k]) * inv_std_[k];
  }
  return x;
}

Vec PopularityEstimator::Probabilities(std::span<const double> embedding) const {
  return nn::Softmax(nn::MlpForward(net_, Standardize(embedding)));
}

int PopularityEstimator::Predict(std::span<const double> embedding) const {
  const Vec logits = nn::MlpForward(net_, Standardize(embedding));
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) -
                          logits.begin());
}

namespace {

// -log softmax(logits)[cls], computed without forming the probability.
double CrossEntropyFromLogits(std::span<const double> logits, int cls) {
  const double top = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - top);
  return top + std::log(sum) - logits[static_cast<std::size_t>(cls)];
}

}  // namespace

double PopularityEstimator::NegLogLikelihood(std::span<const double> embedding,
                                             int cls, Vec* embedding_grad) const {
  if (cls < 0 || cls >= num_classes()) {
    throw std::invalid_argument("PopularityEstimator: bad class");
  }
  nn::ForwardCache cache;
  const Vec logits = nn::MlpForward(net_, Standardize(embedding), &cache);
  Vec p = nn::Softmax(logits);
  const double loss = CrossEntropyFromLogits(logits, cls);
  if (embedding_grad != nullptr) {
    p[cls] -= 1.0;
    const nn::BackwardResult r = nn::MlpBackward(net_, cache, p);
    embedding_grad->resize(embedding.size());
    for (std::size_t k = 0; k < embedding.size(); ++k) {
      (*embedding_grad)[k] = r.input_grad[k] * inv_std_[k];
    }
  }
  return loss;
}

double PopularityEstimator::BatchLoss(const nn::Tensor2D& embeddings,
                                      std::span<const ItemId> items,
                                      std::span<const int> classes,
                                      nn::MLPGrads* grads) const {
  if (items.size() != classes.size()) {
    throw std::invalid_argument("BatchLoss: items and classes differ in size");
  }
  double loss = 0.0;
  nn::ForwardCache cache;
  for (std::size_t n = 0; n < items.size(); ++n) {
    const Vec logits =
        nn::MlpForward(net_, Standardize(embeddings.row(items[n])), &cache);
    Vec p = nn::Softmax(logits);
    loss += CrossEntropyFromLogits(logits, classes[n]);
    if (grads != nullptr) {
      p[classes[n]] -= 1.0;
      nn::MlpBackwardAccumulate(net_, cache, p, *grads);
    }
  }
  return loss;
}

nlohmann::json PopularityEstimator::ToJson() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net_.layers) {
    layers.push_back({{"rows", l.weight.rows()},
                      {"cols", l.weight.cols()},
                      {"weight", l.weight.values()},
                      {"bias", l.bias},
                      {"relu", l.activation == nn::Activation::kRelu}});
  }
  return {{"layers", layers},
          {"mean", mean_},
          {"inv_std", inv_std_},
          {"frozen", frozen_}};
}

PopularityEstimator PopularityEstimator::FromJson(const nlohmann::json& j) {
  nn::MLPParams net;
  for (const auto& l : j.at("layers")) {
    net.layers.push_back(
        {nn::Tensor2D(l.at("rows").get<std::size_t>(),
                      l.at("cols").get<std::size_t>(), l.at("weight").get<Vec>()),
         l.at("bias").get<Vec>(),
         l.at("relu").get<bool>() ? nn::Activation::kRelu
                                  : nn::Activation::kLinear});
  }
  PopularityEstimator e(std::move(net), j.at("mean").get<Vec>(),
                        j.at("inv_std").get<Vec>());
  if (j.at("frozen").get<bool>()) e.Freeze();
  return e;
}

ItemSplit SplitItems(const data::PopularityLabels& labels, ItemId exclude,
                     double heldout_fraction, std::uint64_t seed) {
  if (heldout_fraction < 0.0 || heldout_fraction >= 1.0) {
    throw std::invalid_argument("SplitItems: fraction must be in [0, 1)");
  }
  ItemSplit split;
  for (int c = 0; c < labels.num_classes; ++c) {
    std::vector<ItemId> members;
    for (std::size_t i = 0; i < labels.classes.size(); ++i) {
      if (labels.classes[i] == c && i != exclude) {
        members.push_back(static_cast<ItemId>(i));
      }
    }
    auto rng = MakeRng(seed, {static_cast<std::uint64_t>(c)});
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_out = static_cast<std::size_t>(
        std::round(heldout_fraction * static_cast<double>(members.size())));
    split.heldout.insert(split.heldout.end(), members.begin(),
                         members.begin() + static_cast<std::ptrdiff_t>(n_out));
    split.train.insert(split.train.end(),
                       members.begin() + static_cast<std::ptrdiff_t>(n_out),
                       members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.heldout.begin(), split.heldout.end());
  return split;
}

PopularityEstimator TrainPopularityEstimator(
    const nn::Tensor2D& item_embeddings, const data::PopularityLabels& labels,
    std::span<const ItemId> train_items, const EstimatorConfig& config) {
  const std::size_t d = item_embeddings.cols();
  std::vector<bool> present(static_cast<std::size_t>(labels.num_classes), false);
  for (ItemId i : train_items) present[labels.classes.at(i)] = true;
  if (std::find(present.begin(), present.end(), false) != present.end()) {
    throw std::invalid_argument(
        "TrainPopularityEstimator: every popularity class needs a training item");
  }
  if (config.batch_size == 0 || config.epochs < 0 ||
      config.weight_decay < 0.0) {
    throw std::invalid_argument("TrainPopularityEstimator: bad config");
  }

  Vec mean(d, 0.0);
  Vec inv_std(d, 0.0);
  for (ItemId i : train_items) nn::Axpy(1.0, item_embeddings.row(i), mean);
  const double n = static_cast<double>(train_items.size());
  for (double& m : mean) m /= n;
  for (ItemId i : train_items) {
    const auto row = item_embeddings.row(i);
    for (std::size_t k = 0; k < d; ++k) {
      inv_std[k] += (row[k] - mean[k]) * (row[k] - mean[k]);
    }
  }
  for (double& s : inv_std) s = 1.0 / std::sqrt(s / n + 1e-12);

  std::vector<std::size_t> dims = {d};
  dims.insert(dims.end(), config.hidden.begin(), config.hidden.end());
  dims.push_back(static_cast<std::size_t>(labels.num_classes));
  auto rng = MakeRng(config.seed, {0});
  PopularityEstimator est(
      nn::MLPParams::HeGaussian(dims, nn::Activation::kRelu,
                                nn::Activation::kLinear, rng),
      std::move(mean), std::move(inv_std));

  std::vector<ItemId> order(train_items.begin(), train_items.end());
  std::vector<int> classes(order.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t k = 0; k < order.size(); ++k) {
      classes[k] = labels.classes[order[k]];
    }
    for (std::size_t start = 0; start < order.size();
         start += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, order.size() - start);
      nn::MLPGrads grads = nn::MLPGrads::ZerosLike(est.net());
      est.BatchLoss(item_embeddings,
                    std::span<const ItemId>(order.data() + start, len),
                    std::span<const int>(classes.data() + start, len), &grads);
      if (config.weight_decay > 0.0) {
        for (std::size_t l = 0; l < grads.layers.size(); ++l) {
          const auto& w = est.net().layers[l].weight.values();
          auto& g = grads.layers[l].weight.values();
          for (std::size_t k = 0; k < w.size(); ++k) {
            g[k] += config.weight_decay * static_cast<double>(len) * w[k];
          }
        }
      }
      nn::SgdApply(est.mutable_net(), grads,
                   config.lr / static_cast<double>(len));
    }
  }
  est.Freeze();
  return est;
}

}  // namespace fedpoison::attack
