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

#include "fedpoison/attack.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "fedpoison/rng.h"
#include "spdlog/spdlog.h"

namespace fedpoison::attack {

AttackMode ParseAttackMode(std::string_view name) {
  if (name == "none") return AttackMode::kNone;
  if (name == "pipattack") return AttackMode::kPipAttack;
  if (name == "eb") return AttackMode::kExplicitBoost;
  if (name == "pa") return AttackMode::kPopular;
  if (name == "ra") return AttackMode::kRandom;
  throw std::invalid_argument("unknown attack mode: " + std::string(name));
}

std::string_view AttackModeName(AttackMode mode) {
  switch (mode) {
    case AttackMode::kNone:
      return "none";
    case AttackMode::kPipAttack:
      return "pipattack";
    case AttackMode::kExplicitBoost:
      return "eb";
    case AttackMode::kPopular:
      return "pa";
    case AttackMode::kRandom:
      return "ra";
  }
  return "none";
}

bool IsModelPoisoning(AttackMode mode) {
  return mode == AttackMode::kPipAttack || mode == AttackMode::kExplicitBoost;
}

bool IsDataPoisoning(AttackMode mode) {
  return mode == AttackMode::kPopular || mode == AttackMode::kRandom;
}

void AdversaryConfig::Validate(std::size_t num_items) const {
  if (mode == AttackMode::kNone) return;
  if (target >= num_items) {
    throw std::invalid_argument("adversary: target item out of range");
  }
  if (!(alpha >= 0.0) || !(gamma >= 0.0)) {
    throw std::invalid_argument("adversary: alpha and gamma must be >= 0");
  }
  if (craft_epochs < 0 || !(craft_lr > 0.0)) {
    throw std::invalid_argument("adversary: bad craft schedule");
  }
  if (!(p_norm >= 1.0)) {
    throw std::invalid_argument("adversary: p-norm order must be >= 1");
  }
  if (!std::is_sorted(malicious.begin(), malicious.end())) {
    throw std::invalid_argument("adversary: malicious ids must be ascending");
  }
}

bool AdversaryConfig::IsMalicious(UserId user) const {
  return std::binary_search(malicious.begin(), malicious.end(), user);
}

std::vector<UserId> ChooseMaliciousUsers(std::span<const UserId> clients,
                                         double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction >= 1.0) {
    throw std::invalid_argument("malicious fraction must be in [0, 1)");
  }
  std::vector<UserId> pool(clients.begin(), clients.end());
  auto rng = MakeRng(seed, {0x6d616c});
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(static_cast<std::size_t>(
      std::round(fraction * static_cast<double>(pool.size()))));
  std::sort(pool.begin(), pool.end());
  return pool;
}

double LossExp(const GlobalParams& params,
               std::span<const nn::Vec> malicious_users, ItemId target) {
  double loss = 0.0;
  for (const nn::Vec& u : malicious_users) {
    loss -= std::log(nn::ClampProbability(model::Score(params, u, target)));
  }
  return loss;
}

double LossPop(const PopularityEstimator& estimator,
               std::span<const double> target_embedding, nn::Vec* grad) {
  return estimator.NegLogLikelihood(target_embedding,
                                    estimator.num_classes() - 1, grad);
}

double PNorm(std::span<const double> x, double p) {
  if (p == 2.0) return nn::Norm(x);
  double s = 0.0;
  for (double v : x) s += std::pow(std::abs(v), p);
  return std::pow(s, 1.0 / p);
}

nn::Vec PNormGrad(std::span<const double> x, double p) {
  nn::Vec g(x.size(), 0.0);
  const double norm = PNorm(x, p);
  if (norm == 0.0) return g;
  if (p == 2.0) {
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] / norm;
    return g;
  }
  const double scale = std::pow(norm, p - 1.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = std::abs(x[i]);
    if (a == 0.0) continue;
    g[i] = (x[i] > 0 ? 1.0 : -1.0) * std::pow(a, p - 1.0) / scale;
  }
  return g;
}

double LossDis(std::span<const nn::Vec> crafted,
               std::span<const nn::Vec> genuine, double p) {
  if (genuine.empty()) throw std::invalid_argument("LossDis: no genuine updates");
  const std::size_t dim = genuine.front().size();
  nn::Vec mean(dim, 0.0);
  for (const nn::Vec& g : genuine) {
    if (g.size() != dim) throw std::invalid_argument("LossDis: shape mismatch");
    nn::Axpy(1.0, g, mean);
  }
  for (double& m : mean) m /= static_cast<double>(genuine.size());
  double loss = 0.0;
  nn::Vec diff(dim);
  for (const nn::Vec& c : crafted) {
    if (c.size() != dim) throw std::invalid_argument("LossDis: shape mismatch");
    for (std::size_t i = 0; i < dim; ++i) diff[i] = c[i] - mean[i];
    loss += PNorm(diff, p);
  }
  return loss;
}

CraftObjective::CraftObjective(const GlobalParams& downloaded,
                               const PopularityEstimator* estimator,
                               const AdversaryConfig& config,
                               std::span<const double> genuine_mean,
                               double server_lr)
    : downloaded_(downloaded),
      downloaded_flat_(downloaded.Flatten()),
      estimator_(estimator),
      config_(config),
      genuine_mean_(genuine_mean.begin(), genuine_mean.end()),
      server_lr_(server_lr),
      scratch_(downloaded) {
  if (config_.alpha > 0.0 && estimator_ == nullptr) {
    throw std::invalid_argument("CraftObjective: alpha > 0 needs an estimator");
  }
  if (config_.gamma > 0.0 && genuine_mean_.size() != downloaded_flat_.size()) {
    throw std::invalid_argument(
        "CraftObjective: gamma > 0 needs the dense genuine mean update");
  }
  if (!(server_lr_ > 0.0)) {
    throw std::invalid_argument("CraftObjective: server lr must be > 0");
  }
}

void CraftObjective::TermGradients(std::span<const double> theta,
                                   std::span<const double> user,
                                   nn::Vec& exp_grad, nn::Vec& pop_grad,
                                   nn::Vec& dis_grad, nn::Vec& user_grad) const {
  scratch_.AssignFlat(theta);
  const model::Sample sample{config_.target, 1.0};
  model::LossAndGrads g = model::LocalLossAndGrads(scratch_, user, {&sample, 1});
  exp_grad = g.update.ToDense(scratch_);
  user_grad = std::move(g.user_grad);

  const std::size_t d = downloaded_.dim();
  pop_grad.assign(theta.size(), 0.0);
  if (estimator_ != nullptr) {
    nn::Vec gv;
    LossPop(*estimator_, theta.subspan(config_.target * d, d), &gv);
    std::copy(gv.begin(), gv.end(), pop_grad.begin() + config_.target * d);
  }
  dis_grad.assign(theta.size(), 0.0);
  if (!genuine_mean_.empty()) {
    nn::Vec diff(theta.size());
    const double inv = 1.0 / server_lr_;
    for (std::size_t i = 0; i < diff.size(); ++i) {
      diff[i] = (downloaded_flat_[i] - theta[i]) * inv - genuine_mean_[i];
    }
    const nn::Vec gn = PNormGrad(diff, config_.p_norm);
    for (std::size_t i = 0; i < diff.size(); ++i) dis_grad[i] = -inv * gn[i];
  }
}

nn::Vec CraftObjective::DistanceAnchor() const {
  nn::Vec anchor = downloaded_flat_;
  if (!genuine_mean_.empty()) nn::Axpy(-server_lr_, genuine_mean_, anchor);
  return anchor;
}

CraftObjective::Terms CraftObjective::Evaluate(std::span<const double> theta,
                                               std::span<const double> user,
                                               nn::Vec* theta_grad,
                                               nn::Vec* user_grad,
                                               bool distance_gradient) const {
  Terms t;
  scratch_.AssignFlat(theta);
  const std::size_t d = downloaded_.dim();
  const auto target_row = theta.subspan(config_.target * d, d);
  if (theta_grad == nullptr && user_grad == nullptr) {
    t.exp = -std::log(
        nn::ClampProbability(model::Score(scratch_, user, config_.target)));
    if (estimator_ != nullptr) t.pop = LossPop(*estimator_, target_row);
  } else {
    const model::Sample sample{config_.target, 1.0};
    model::LossAndGrads g =
        model::LocalLossAndGrads(scratch_, user, {&sample, 1});
    t.exp = g.loss;
    nn::Vec tg = g.update.ToDense(scratch_);
    if (estimator_ != nullptr) {
      nn::Vec gv;
      t.pop = LossPop(*estimator_, target_row, &gv);
      if (config_.alpha > 0.0) {
        nn::Axpy(config_.alpha, gv,
                 std::span<double>(tg).subspan(config_.target * d, d));
      }
    }
    if (!genuine_mean_.empty() && distance_gradient) {
      nn::Vec diff(theta.size());
      const double inv = 1.0 / server_lr_;
      for (std::size_t i = 0; i < diff.size(); ++i) {
        diff[i] = (downloaded_flat_[i] - theta[i]) * inv - genuine_mean_[i];
      }
      const nn::Vec gn = PNormGrad(diff, config_.p_norm);
      nn::Axpy(-inv * config_.gamma, gn, tg);
    }
    if (theta_grad != nullptr) *theta_grad = std::move(tg);
    if (user_grad != nullptr) *user_grad = std::move(g.user_grad);
  }
  if (!genuine_mean_.empty()) {
    nn::Vec diff(theta.size());
    for (std::size_t i = 0; i < diff.size(); ++i) {
      diff[i] = (downloaded_flat_[i] - theta[i]) / server_lr_ - genuine_mean_[i];
    }
    t.dis = PNorm(diff, config_.p_norm);
  }
  t.total = t.exp + config_.alpha * t.pop + config_.gamma * t.dis;
  return t;
}

CraftResult CraftUpdate(const GlobalParams& downloaded,
                        const PopularityEstimator* estimator,
                        const AdversaryConfig& config,
                        std::span<const double> genuine_mean, double server_lr,
                        nn::Vec& user_embedding, const GradientUpdate& genuine) {
  const CraftObjective objective(downloaded, estimator, config, genuine_mean,
                                 server_lr);
  const nn::Vec start_user = user_embedding;
  nn::Vec theta = downloaded.Flatten();
  const nn::Vec down = theta;
  CraftResult result;
  nn::Vec theta_grad;
  nn::Vec user_grad;
  const bool proximal = config.gamma > 0.0 && config.p_norm == 2.0;
  const nn::Vec anchor = proximal ? objective.DistanceAnchor() : nn::Vec();
  // gamma * ||c - g|| in parameter space is (gamma / lr) * ||theta - anchor||.
  const double shrink = config.craft_lr * config.gamma / server_lr;
  bool ok = true;
  for (int step = 0; step < config.craft_epochs && ok; ++step) {
    const auto terms = objective.Evaluate(theta, user_embedding, &theta_grad,
                                          &user_grad, !proximal);
    result.loss_trace.push_back(terms.total);
    ok = std::isfinite(terms.total) && nn::AllFinite(theta_grad) &&
         nn::AllFinite(user_grad);
    if (!ok) break;
    nn::Axpy(-config.craft_lr, theta_grad, theta);
    nn::Axpy(-config.craft_lr, user_grad, user_embedding);
    if (proximal) {
      double dist = 0.0;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        dist += (theta[i] - anchor[i]) * (theta[i] - anchor[i]);
      }
      dist = std::sqrt(dist);
      const double keep = dist > shrink ? 1.0 - shrink / dist : 0.0;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        theta[i] = anchor[i] + keep * (theta[i] - anchor[i]);
      }
    }
  }
  if (ok) {
    const double final_loss = objective.Evaluate(theta, user_embedding, nullptr,
                                                 nullptr).total;
    result.loss_trace.push_back(final_loss);
    ok = std::isfinite(final_loss);
  }
  nn::Vec crafted(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    crafted[i] = (down[i] - theta[i]) / server_lr;
  }
  if (!ok || !nn::AllFinite(crafted)) {
    spdlog::warn("crafting produced a non-finite objective; submitting the "
                 "genuine update instead");
    user_embedding = start_user;
    result.update = genuine;
    result.fell_back = true;
    return result;
  }
  result.update = GradientUpdate::FromDense(crafted, downloaded);
  return result;
}

void PoisonProfiles(std::vector<data::UserData>& local_data,
                    const AdversaryConfig& config,
                    const data::PopularityLabels& labels, std::size_t num_items,
                    int q, std::uint64_t seed) {
  if (!IsDataPoisoning(config.mode)) {
    throw std::invalid_argument("PoisonProfiles: not a data-poisoning mode");
  }
  for (data::UserData& user : local_data) {
    if (!config.IsMalicious(user.user)) continue;
    std::vector<ItemId> candidates;
    for (std::size_t i = 0; i < num_items; ++i) {
      if (i == config.target || i == user.holdout) continue;
      if (config.mode == AttackMode::kPopular &&
          labels.classes.at(i) != labels.top_class()) {
        continue;
      }
      candidates.push_back(static_cast<ItemId>(i));
    }
    auto rng = MakeRng(seed, {user.user, 0x706f6973});
    std::vector<ItemId> fillers;
    if (config.fillers <= candidates.size()) {
      std::sample(candidates.begin(), candidates.end(),
                  std::back_inserter(fillers), config.fillers, rng);
    } else if (!candidates.empty()) {
      spdlog::warn("user {}: {} fillers requested but only {} candidates; "
                   "sampling with replacement",
                   user.user, config.fillers, candidates.size());
      std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
      for (std::size_t k = 0; k < config.fillers; ++k) {
        fillers.push_back(candidates[pick(rng)]);
      }
    }
    user.positives = {config.target};
    user.positives.insert(user.positives.end(), fillers.begin(), fillers.end());
    std::sort(user.positives.begin(), user.positives.end());
    data::SampleNegatives(user, num_items, q, rng);
  }
}

std::size_t MeanProfileLength(const data::InteractionDataset& dataset) {
  if (dataset.users.empty()) return 0;
  std::size_t total = 0;
  for (const auto& u : dataset.users) total += u.positives.size();
  return static_cast<std::size_t>(std::llround(
      static_cast<double>(total) / static_cast<double>(dataset.users.size())));
}

}  // namespace fedpoison::attack
