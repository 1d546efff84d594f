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

#ifndef FEDPOISON_ESTIMATOR_H_
#define FEDPOISON_ESTIMATOR_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedpoison/data.h"
#include "fedpoison/mlp.h"
#include "fedpoison/tensor.h"
#include "json.hpp"

namespace fedpoison::attack {

using data::ItemId;
using nn::Vec;

struct EstimatorConfig {
  std::vector<std::size_t> hidden = {32, 16, 8};
  int epochs = 400;
  double lr = 0.05;
  double weight_decay = 0.05;
  std::size_t batch_size = 32;
  double holdout_fraction = 0.2;
  std::uint64_t seed = 7;
};

// Classifier from an item embedding to popularity-class probabilities. The
// input is standardized with per-feature statistics fixed at training time.
class PopularityEstimator {
 public:
  PopularityEstimator() = default;
  PopularityEstimator(nn::MLPParams net, Vec mean, Vec inv_std);

  std::size_t input_dim() const { return net_.input_dim(); }
  int num_classes() const { return static_cast<int>(net_.output_dim()); }
  bool frozen() const { return frozen_; }
  void Freeze() { frozen_ = true; }

  const nn::MLPParams& net() const { return net_; }
  // Mutable access; throws std::logic_error once frozen.
  nn::MLPParams& mutable_net();

  Vec Probabilities(std::span<const double> embedding) const;
  int Predict(std::span<const double> embedding) const;

  // -log p[cls] and its gradient w.r.t. the embedding.
  double NegLogLikelihood(std::span<const double> embedding, int cls,
                          Vec* embedding_grad = nullptr) const;
  // Summed cross-entropy over (embedding, class) pairs and its gradient
  // w.r.t. the network parameters.
  double BatchLoss(const nn::Tensor2D& embeddings,
                   std::span<const ItemId> items, std::span<const int> classes,
                   nn::MLPGrads* grads) const;

  nlohmann::json ToJson() const;
  static PopularityEstimator FromJson(const nlohmann::json& j);

 private:
  Vec Standardize(std::span<const double> embedding) const;

  nn::MLPParams net_;
  Vec mean_;
  Vec inv_std_;
  bool frozen_ = false;
};

struct ItemSplit {
  std::vector<ItemId> train;
  std::vector<ItemId> heldout;
};

// Stratified split of every item except `exclude`, deterministic per seed.
ItemSplit SplitItems(const data::PopularityLabels& labels, ItemId exclude,
                     double heldout_fraction, std::uint64_t seed);

// Trains on `train_items` with mini-batch SGD and returns the frozen model.
// Throws std::invalid_argument if some class has no training item.
PopularityEstimator TrainPopularityEstimator(
    const nn::Tensor2D& item_embeddings, const data::PopularityLabels& labels,
    std::span<const ItemId> train_items, const EstimatorConfig& config);

}  // namespace fedpoison::attack

#endif  // FEDPOISON_ESTIMATOR_H_
