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

#ifndef FEDPOISON_FEDERATION_H_
#define FEDPOISON_FEDERATION_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedpoison/attack.h"
#include "fedpoison/data.h"
#include "fedpoison/defense.h"
#include "fedpoison/estimator.h"
#include "fedpoison/eval.h"
#include "fedpoison/model.h"
#include "json.hpp"

namespace fedpoison::federation {

using data::UserId;
using nn::Vec;

struct FederationConfig {
  double client_fraction = 0.1;
  double lr = 0.01;
  std::size_t batch_size = 64;
  defense::AggregationRule rule = defense::AggregationRule::kMean;
  // Trim count / Byzantine bound; unset means round(zeta * participants).
  std::optional<std::size_t> byzantine;
  std::uint64_t round_seed = 3;
  bool force_include_malicious = false;
  bool resample_negatives = false;
  std::size_t er_k = 5;
  std::size_t hr_k = 10;
  std::size_t kl_bins = 50;
  // Clients trained concurrently within a round; results do not depend on it.
  std::size_t threads = 1;

  void Validate() const;
};

struct RoundReport {
  int round = 0;
  std::vector<UserId> participants;
  std::vector<UserId> malicious_participants;  // only while the attack runs
  double aggregate_norm = 0.0;
  std::optional<double> kl;  // benign vs malicious update histograms
  std::optional<double> f1;  // estimator held-out F1, on the activation round
  std::vector<std::vector<double>> craft_traces;
  std::size_t craft_fallbacks = 0;
};

// round(fraction * |clients|) ids (at least one) drawn uniformly without
// replacement, returned ascending.
std::vector<UserId> SampleClients(std::span<const UserId> clients,
                                  double fraction, std::uint64_t seed);

// Called once per submitted update with the serialized wire message.
using TrafficObserver =
    std::function<void(int round, UserId client, const std::string& message)>;

// Server, clients and (optionally) the adversary of one federated run.
class Simulation {
 public:
  Simulation(const data::InteractionDataset& dataset,
             data::PopularityLabels labels, const model::ModelConfig& model,
             const FederationConfig& federation, std::uint64_t model_seed);

  // Installs the adversary. Before `attack_start_epoch` its clients train
  // honestly; from that round on they attack whenever sampled.
  void SetAdversary(attack::AdversaryConfig config, int attack_start_epoch,
                    attack::EstimatorConfig estimator = {});
  void SetTrafficObserver(TrafficObserver observer) {
    observer_ = std::move(observer);
  }
  void SetFederationConfig(const FederationConfig& config);

  // Runs round next_round() (starting at 1).
  RoundReport RunRound();

  // ER / HR over benign users.
  eval::RankingMetrics Evaluate() const;

  int next_round() const { return next_round_; }
  bool attack_active() const { return activated_; }
  const model::GlobalParams& global() const { return global_; }
  std::span<const Vec> user_embeddings() const { return user_embeddings_; }
  const std::vector<UserId>& clients() const { return clients_; }
  const std::vector<UserId>& benign_users() const { return benign_; }
  const attack::AdversaryConfig& adversary() const { return adversary_; }
  const std::optional<attack::PopularityEstimator>& estimator() const {
    return estimator_;
  }
  const data::PopularityLabels& labels() const { return labels_; }
  const data::InteractionDataset& dataset() const { return dataset_; }
  const FederationConfig& federation_config() const { return federation_; }

  nlohmann::json Checkpoint() const;
  void Restore(const nlohmann::json& checkpoint);

 private:
  void Activate(RoundReport& report);
  model::LocalTrainResult GenuineUpdate(UserId user, int round, Vec& embedding) const;
  const data::UserData& LocalData(UserId user) const;

  const data::InteractionDataset& dataset_;
  data::PopularityLabels labels_;
  model::ModelConfig model_config_;
  FederationConfig federation_;
  model::GlobalParams global_;
  std::vector<Vec> user_embeddings_;  // indexed by user id
  std::vector<data::UserData> local_data_;
  std::vector<int> local_index_;  // user id -> local_data_ position
  std::vector<UserId> clients_;
  std::vector<UserId> benign_;

  attack::AdversaryConfig adversary_;
  attack::EstimatorConfig estimator_config_;
  int attack_start_ = 0;
  bool activated_ = false;
  std::optional<attack::PopularityEstimator> estimator_;

  int next_round_ = 1;
  TrafficObserver observer_;
};

}  // namespace fedpoison::federation

#endif  // FEDPOISON_FEDERATION_H_
