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

#ifndef FEDPOISON_MODEL_H_
#define FEDPOISON_MODEL_H_

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fedpoison/data.h"
#include "fedpoison/mlp.h"
#include "fedpoison/tensor.h"
#include "json.hpp"

namespace fedpoison::model {

using data::ItemId;
using data::UserId;
using nn::Vec;

enum class FfnInit {
  kUnitGaussian,  // N(0, 1) for every weight, bias and the projection
  kHe,            // N(0, 2 / fan_in) weights, zero biases
};

struct ModelConfig {
  std::size_t dim = 64;
  std::vector<std::size_t> tower = {64, 32, 16};
  double embedding_init_std = 0.01;
  FfnInit ffn_init = FfnInit::kHe;
};

// Parameters shared through the server: item table, FFN tower, projection h.
struct GlobalParams {
  nn::Tensor2D item_embeddings;  // N x d
  nn::MLPParams ffn;             // 2d -> ... -> d_L
  Vec projection;                // d_L

  static GlobalParams Init(std::size_t num_items, const ModelConfig& config,
                           std::uint64_t seed);

  std::size_t num_items() const { return item_embeddings.rows(); }
  std::size_t dim() const { return item_embeddings.cols(); }
  void Validate() const;

  // Flat layout: item rows, then FFN (weight, bias per layer), then h.
  std::size_t FlatSize() const;
  std::size_t FfnOffset() const { return item_embeddings.size(); }
  std::size_t ProjectionOffset() const;
  Vec Flatten() const;
  void AssignFlat(std::span<const double> flat);

  friend bool operator==(const GlobalParams&, const GlobalParams&) = default;
};

Vec InitUserEmbedding(UserId user, const ModelConfig& config,
                      std::uint64_t seed);

// One user's private embedding plus its copy of the shared parameters.
struct LocalClientState {
  UserId user = 0;
  Vec user_embedding;
  GlobalParams shared;
};

// Update submitted to the server. Carries shared-parameter entries only; the
// user embedding has no representation here.
struct GradientUpdate {
  std::map<ItemId, Vec> item_rows;
  nn::MLPGrads ffn;
  Vec projection;

  static GradientUpdate ZerosLike(const GlobalParams& params);
  // Throws std::invalid_argument when shapes disagree with `params`.
  void Validate(const GlobalParams& params) const;
  void Scale(double factor);
  void AddScaled(const GradientUpdate& other, double factor);
  double Norm() const;
  bool AllFinite() const;

  // Dense flat vector in GlobalParams::Flatten order (absent rows are zero).
  Vec ToDense(const GlobalParams& like) const;
  // Sparse view of a dense vector; rows that are exactly zero are dropped.
  static GradientUpdate FromDense(std::span<const double> dense,
                                  const GlobalParams& like);

  // Wire format seen by the server.
  nlohmann::json ToWire() const;
  static GradientUpdate FromWire(const nlohmann::json& j);

  friend bool operator==(const GradientUpdate&, const GradientUpdate&) = default;
};

// Top-level keys a wire message may carry.
const std::vector<std::string>& WireFieldNames();

// theta <- theta - lr * update
void ApplyUpdate(GlobalParams& params, const GradientUpdate& update, double lr);

// Pre-sigmoid score h^T FFN(u (+) v).
double ScoreLogit(const GlobalParams& params, std::span<const double> user,
                  ItemId item);
double Score(const GlobalParams& params, std::span<const double> user,
             ItemId item);
double Score(const LocalClientState& state, ItemId item);

struct Sample {
  ItemId item = 0;
  double label = 0.0;
};

struct LossAndGrads {
  double loss = 0.0;
  GradientUpdate update;  // d loss / d shared parameters
  Vec user_grad;          // stays on the client
};

// Summed binary cross-entropy over the batch and its exact gradients.
LossAndGrads LocalLossAndGrads(const GlobalParams& params,
                               std::span<const double> user,
                               std::span<const Sample> batch);
LossAndGrads LocalLossAndGrads(const LocalClientState& state,
                               std::span<const Sample> batch);

// Scores every item for one user; the first FFN layer is split so the item
// half is computed once per call.
class ItemScorer {
 public:
  explicit ItemScorer(const GlobalParams& params);
  // Logits for all items.
  Vec Logits(std::span<const double> user) const;

 private:
  const GlobalParams& params_;
  nn::Tensor2D item_part_;  // N x h1: W_item v_j + b
};

// K items outside `excluded` with the highest score, descending; ties go to
// the lower index. Returns every candidate when fewer than K exist.
std::vector<ItemId> RecommendTopK(std::span<const double> logits, std::size_t k,
                                  std::span<const ItemId> excluded);
std::vector<ItemId> RecommendTopK(const GlobalParams& params,
                                  std::span<const double> user, std::size_t k,
                                  std::span<const ItemId> excluded);

struct LocalTrainResult {
  GradientUpdate update;  // (theta_downloaded - theta_local) / lr
  double loss = 0.0;      // summed over the pass
};

// One shuffled pass of mini-batch SGD over the user's positives and
// negatives. Updates `user_embedding` in place.
LocalTrainResult TrainLocal(const GlobalParams& global, Vec& user_embedding,
                            const data::UserData& user, double lr,
                            std::size_t batch_size, std::mt19937_64& rng);

std::vector<Sample> TrainingSamples(const data::UserData& user);

}  // namespace fedpoison::model

#endif  // FEDPOISON_MODEL_H_
