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

#include "fedpoison/federation.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <utility>

#include "fedpoison/parallel.h"
#include "fedpoison/rng.h"
#include "spdlog/spdlog.h"

namespace fedpoison::federation {
namespace {

constexpr std::uint64_t kClientStream = 1;
constexpr std::uint64_t kNegativeStream = 2;
constexpr std::uint64_t kPoisonStream = 0x706f6973;

}  // namespace

void FederationConfig::Validate() const {
  if (!(client_fraction > 0.0 && client_fraction <= 1.0)) {
    throw std::invalid_argument("client_fraction must be in (0, 1]");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (er_k == 0 || hr_k == 0) throw std::invalid_argument("K must be >= 1");
  if (kl_bins == 0) throw std::invalid_argument("kl_bins must be >= 1");
  if (threads == 0) throw std::invalid_argument("threads must be >= 1");
}

std::vector<UserId> SampleClients(std::span<const UserId> clients,
                                  double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("SampleClients: fraction must be in (0, 1]");
  }
  if (clients.empty()) return {};
  const auto count = std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::llround(fraction * static_cast<double>(clients.size()))));
  std::vector<UserId> out;
  out.reserve(count);
  std::mt19937_64 rng(seed);
  std::sample(clients.begin(), clients.end(), std::back_inserter(out), count,
              rng);
  std::sort(out.begin(), out.end());
  return out;
}

Simulation::Simulation(const data::InteractionDataset& dataset,
                       data::PopularityLabels labels,
                       const model::ModelConfig& model,
                       const FederationConfig& federation,
                       std::uint64_t model_seed)
    : dataset_(dataset),
      labels_(std::move(labels)),
      model_config_(model),
      federation_(federation),
      global_(model::GlobalParams::Init(dataset.num_items, model, model_seed)),
      user_embeddings_(dataset.num_users),
      local_data_(dataset.users),
      local_index_(dataset.num_users, -1) {
  federation_.Validate();
  if (labels_.classes.size() != dataset.num_items) {
    throw std::invalid_argument("Simulation: labels do not cover every item");
  }
  for (std::size_t k = 0; k < local_data_.size(); ++k) {
    const UserId u = local_data_[k].user;
    local_index_[u] = static_cast<int>(k);
    clients_.push_back(u);
    user_embeddings_[u] = model::InitUserEmbedding(u, model, model_seed);
  }
  benign_ = clients_;
}

void Simulation::SetFederationConfig(const FederationConfig& config) {
  config.Validate();
  federation_ = config;
}

void Simulation::SetAdversary(attack::AdversaryConfig config,
                              int attack_start_epoch,
                              attack::EstimatorConfig estimator) {
  config.Validate(dataset_.num_items);
  for (UserId u : config.malicious) {
    if (u >= local_index_.size() || local_index_[u] < 0) {
      throw std::invalid_argument("adversary: malicious id is not a client");
    }
  }
  if (config.mode == attack::AttackMode::kExplicitBoost) {
    config.alpha = 0.0;
    config.gamma = 0.0;
  }
  adversary_ = std::move(config);
  estimator_config_ = estimator;
  attack_start_ = attack_start_epoch;
  benign_.clear();
  for (UserId u : clients_) {
    if (!adversary_.IsMalicious(u)) benign_.push_back(u);
  }
}

const data::UserData& Simulation::LocalData(UserId user) const {
  return local_data_.at(static_cast<std::size_t>(local_index_.at(user)));
}

model::LocalTrainResult Simulation::GenuineUpdate(UserId user, int round,
                                                  Vec& embedding) const {
  auto rng = MakeRng(federation_.round_seed,
                     {static_cast<std::uint64_t>(round), user, kClientStream});
  return model::TrainLocal(global_, embedding, LocalData(user), federation_.lr,
                           federation_.batch_size, rng);
}

void Simulation::Activate(RoundReport& report) {
  using attack::AttackMode;
  if (adversary_.mode == AttackMode::kPipAttack && adversary_.alpha > 0.0) {
    const attack::ItemSplit split =
        attack::SplitItems(labels_, adversary_.target,
                           estimator_config_.holdout_fraction,
                           estimator_config_.seed);
    estimator_ = attack::TrainPopularityEstimator(
        global_.item_embeddings, labels_, split.train, estimator_config_);
    if (!split.heldout.empty()) {
      report.f1 = eval::ClassifierF1(*estimator_, global_.item_embeddings,
                                     labels_, split.heldout);
    }
    spdlog::info("round {}: popularity estimator trained on {} items",
                 report.round, split.train.size());
  }
  if (attack::IsDataPoisoning(adversary_.mode)) {
    attack::PoisonProfiles(local_data_, adversary_, labels_, dataset_.num_items,
                           dataset_.q,
                           DeriveSeed(federation_.round_seed, {kPoisonStream}));
  }
  activated_ = true;
}

RoundReport Simulation::RunRound() {
  const int t = next_round_;
  RoundReport report;
  report.round = t;
  const bool attacking =
      adversary_.mode != attack::AttackMode::kNone && t >= attack_start_;
  if (attacking && !activated_) Activate(report);

  std::vector<UserId> participants = SampleClients(
      clients_, federation_.client_fraction,
      DeriveSeed(federation_.round_seed, {static_cast<std::uint64_t>(t)}));
  if (attacking && federation_.force_include_malicious) {
    std::vector<UserId> merged;
    std::set_union(participants.begin(), participants.end(),
                   adversary_.malicious.begin(), adversary_.malicious.end(),
                   std::back_inserter(merged));
    participants = std::move(merged);
  }
  if (federation_.resample_negatives) {
    for (UserId u : participants) {
      auto rng = MakeRng(federation_.round_seed,
                         {static_cast<std::uint64_t>(t), u, kNegativeStream});
      data::SampleNegatives(local_data_[local_index_[u]], dataset_.num_items,
                            dataset_.q, rng);
    }
  }

  const bool crafting = attacking && attack::IsModelPoisoning(adversary_.mode);
  const std::size_t threads = federation_.threads;
  std::vector<model::GradientUpdate> updates(participants.size());
  // Embeddings are committed only after the round succeeds.
  std::vector<Vec> embeddings(participants.size());
  std::vector<std::size_t> crafted_slots;
  std::vector<std::size_t> genuine_slots;
  std::vector<std::size_t> benign_slots;
  for (std::size_t k = 0; k < participants.size(); ++k) {
    const UserId u = participants[k];
    const bool malicious = attacking && adversary_.IsMalicious(u);
    if (malicious) report.malicious_participants.push_back(u);
    if (!malicious) benign_slots.push_back(k);
    (crafting && malicious ? crafted_slots : genuine_slots).push_back(k);
    embeddings[k] = user_embeddings_[u];
  }
  ParallelFor(genuine_slots.size(), threads, [&](std::size_t i) {
    const std::size_t k = genuine_slots[i];
    updates[k] = GenuineUpdate(participants[k], t, embeddings[k]).update;
  });

  if (!crafted_slots.empty()) {
    // Phase one: genuine updates of the malicious clients on their real data.
    Vec genuine_mean;
    std::vector<model::GradientUpdate> genuine(participants.size());
    if (adversary_.gamma > 0.0) {
      const auto& malicious = adversary_.malicious;
      std::vector<model::GradientUpdate> all(malicious.size());
      ParallelFor(malicious.size(), threads, [&](std::size_t i) {
        Vec copy = user_embeddings_[malicious[i]];
        all[i] = GenuineUpdate(malicious[i], t, copy).update;
      });
      genuine_mean.assign(global_.FlatSize(), 0.0);
      const double w = 1.0 / static_cast<double>(malicious.size());
      for (std::size_t i = 0; i < malicious.size(); ++i) {
        nn::Axpy(w, all[i].ToDense(global_), genuine_mean);
        const auto it = std::lower_bound(participants.begin(),
                                         participants.end(), malicious[i]);
        if (it != participants.end() && *it == malicious[i]) {
          genuine[static_cast<std::size_t>(it - participants.begin())] =
              std::move(all[i]);
        }
      }
    } else {
      ParallelFor(crafted_slots.size(), threads, [&](std::size_t i) {
        const std::size_t k = crafted_slots[i];
        Vec copy = user_embeddings_[participants[k]];
        genuine[k] = GenuineUpdate(participants[k], t, copy).update;
      });
    }
    // Phase two: craft.
    const attack::PopularityEstimator* est =
        estimator_ ? &*estimator_ : nullptr;
    std::vector<attack::CraftResult> crafted(crafted_slots.size());
    ParallelFor(crafted_slots.size(), threads, [&](std::size_t i) {
      const std::size_t k = crafted_slots[i];
      crafted[i] = attack::CraftUpdate(global_, est, adversary_, genuine_mean,
                                       federation_.lr, embeddings[k],
                                       genuine[k]);
    });
    for (std::size_t i = 0; i < crafted_slots.size(); ++i) {
      updates[crafted_slots[i]] = std::move(crafted[i].update);
      report.craft_traces.push_back(std::move(crafted[i].loss_trace));
      report.craft_fallbacks += crafted[i].fell_back ? 1 : 0;
    }
  }

  for (std::size_t k = 0; k < participants.size(); ++k) {
    if (!updates[k].AllFinite()) {
      throw std::runtime_error("round " + std::to_string(t) + ": client " +
                               std::to_string(participants[k]) +
                               " produced a non-finite update");
    }
    if (observer_) observer_(t, participants[k], updates[k].ToWire().dump());
  }

  std::size_t byzantine = 0;
  if (federation_.byzantine) {
    byzantine = *federation_.byzantine;
  } else if (!clients_.empty()) {
    const double zeta = static_cast<double>(adversary_.malicious.size()) /
                        static_cast<double>(clients_.size());
    byzantine = static_cast<std::size_t>(
        std::llround(zeta * static_cast<double>(participants.size())));
  }
  const model::GradientUpdate aggregate = defense::AggregateUpdates(
      updates, federation_.rule, byzantine, global_);
  model::ApplyUpdate(global_, aggregate, federation_.lr);
  report.aggregate_norm = aggregate.Norm();
  for (std::size_t k = 0; k < participants.size(); ++k) {
    user_embeddings_[participants[k]] = std::move(embeddings[k]);
  }

  if (!report.malicious_participants.empty() && !benign_slots.empty()) {
    std::vector<model::GradientUpdate> benign;
    std::vector<model::GradientUpdate> malicious;
    for (std::size_t k = 0; k < participants.size(); ++k) {
      if (adversary_.IsMalicious(participants[k])) {
        malicious.push_back(updates[k]);
      } else {
        benign.push_back(updates[k]);
      }
    }
    report.kl = eval::GradKlDivergence(benign, malicious, federation_.kl_bins);
  }
  report.participants = std::move(participants);
  ++next_round_;
  return report;
}

eval::RankingMetrics Simulation::Evaluate() const {
  return eval::EvaluateRanking(global_, user_embeddings_, dataset_, benign_,
                               federation_.er_k, federation_.hr_k,
                               adversary_.target);
}

nlohmann::json Simulation::Checkpoint() const {
  nlohmann::json j;
  j["format"] = "fedpoison.checkpoint";
  j["version"] = 1;
  j["next_round"] = next_round_;
  j["attack_activated"] = activated_;
  j["num_items"] = global_.num_items();
  j["dim"] = global_.dim();
  j["shared"] = global_.Flatten();
  auto& users = j["users"] = nlohmann::json::array();
  for (UserId u : clients_) {
    users.push_back({{"user", u}, {"embedding", user_embeddings_[u]}});
  }
  j["estimator"] = estimator_ ? estimator_->ToJson() : nlohmann::json(nullptr);
  if (federation_.resample_negatives) {
    auto& negatives = j["negatives"] = nlohmann::json::array();
    for (const auto& ud : local_data_) {
      negatives.push_back({{"user", ud.user}, {"items", ud.negatives}});
    }
  }
  return j;
}

void Simulation::Restore(const nlohmann::json& j) {
  if (j.value("format", "") != "fedpoison.checkpoint" ||
      j.value("version", 0) != 1) {
    throw std::runtime_error("unsupported checkpoint");
  }
  if (j.at("num_items").get<std::size_t>() != global_.num_items() ||
      j.at("dim").get<std::size_t>() != global_.dim()) {
    throw std::runtime_error("checkpoint shape does not match the model");
  }
  global_.AssignFlat(j.at("shared").get<Vec>());
  for (const auto& u : j.at("users")) {
    const UserId id = u.at("user").get<UserId>();
    if (id >= user_embeddings_.size() || local_index_[id] < 0) {
      throw std::runtime_error("checkpoint names an unknown client");
    }
    user_embeddings_[id] = u.at("embedding").get<Vec>();
  }
  next_round_ = j.at("next_round").get<int>();
  estimator_.reset();
  if (!j.at("estimator").is_null()) {
    estimator_ = attack::PopularityEstimator::FromJson(j.at("estimator"));
  }
  local_data_ = dataset_.users;
  activated_ = false;
  if (j.at("attack_activated").get<bool>()) {
    if (attack::IsDataPoisoning(adversary_.mode)) {
      attack::PoisonProfiles(local_data_, adversary_, labels_,
                             dataset_.num_items, dataset_.q,
                             DeriveSeed(federation_.round_seed, {kPoisonStream}));
    }
    activated_ = true;
  }
  if (j.contains("negatives")) {
    for (const auto& n : j.at("negatives")) {
      const UserId id = n.at("user").get<UserId>();
      if (id >= local_index_.size() || local_index_[id] < 0) {
        throw std::runtime_error("checkpoint names an unknown client");
      }
      local_data_[static_cast<std::size_t>(local_index_[id])].negatives =
          n.at("items").get<std::vector<data::ItemId>>();
    }
  }
}

}  // namespace fedpoison::federation
