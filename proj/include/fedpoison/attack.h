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

#ifndef FEDPOISON_ATTACK_H_
#define FEDPOISON_ATTACK_H_

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedpoison/data.h"
#include "fedpoison/estimator.h"
#include "fedpoison/model.h"

namespace fedpoison::attack {

using data::UserId;
using model::GlobalParams;
using model::GradientUpdate;

enum class AttackMode {
  kNone,
  kPipAttack,      // L_exp + alpha L_pop + gamma L_dis
  kExplicitBoost,  // L_exp only
  kPopular,        // fake profiles: target + popular fillers
  kRandom,         // fake profiles: target + random fillers
};

AttackMode ParseAttackMode(std::string_view name);
std::string_view AttackModeName(AttackMode mode);
bool IsModelPoisoning(AttackMode mode);
bool IsDataPoisoning(AttackMode mode);

struct AdversaryConfig {
  AttackMode mode = AttackMode::kNone;
  ItemId target = 0;
  std::vector<UserId> malicious;  // ascending
  double alpha = 60.0;
  double gamma = 0.0005;
  int craft_epochs = 30;
  double craft_lr = 0.01;
  double p_norm = 2.0;
  std::size_t fillers = 0;

  // Throws std::invalid_argument on negative coefficients or bad norms.
  void Validate(std::size_t num_items) const;
  bool IsMalicious(UserId user) const;
};

// First round(fraction * |clients|) ids of a seeded shuffle, ascending.
std::vector<UserId> ChooseMaliciousUsers(std::span<const UserId> clients,
                                         double fraction, std::uint64_t seed);

// -sum_u log r(u, target) over the given malicious user embeddings.
double LossExp(const GlobalParams& params,
               std::span<const nn::Vec> malicious_users, ItemId target);

// -log f_est(v)[top class].
double LossPop(const PopularityEstimator& estimator,
               std::span<const double> target_embedding,
               nn::Vec* grad = nullptr);

double PNorm(std::span<const double> x, double p);
// d ||x||_p / dx; zero at x = 0.
nn::Vec PNormGrad(std::span<const double> x, double p);

// sum_i || crafted_i - mean(genuine) ||_p over dense flat updates.
double LossDis(std::span<const nn::Vec> crafted,
               std::span<const nn::Vec> genuine, double p = 2.0);

// Objective one malicious client minimizes over its copy of the shared
// parameters (flat) and its own user embedding:
//   -log r(u, target) + alpha * L_pop(v_target) + gamma * ||c - g||_p
// with c = (theta_downloaded - theta) / lr.
class CraftObjective {
 public:
  struct Terms {
    double exp = 0.0;
    double pop = 0.0;
    double dis = 0.0;
    double total = 0.0;
  };

  CraftObjective(const GlobalParams& downloaded,
                 const PopularityEstimator* estimator,
                 const AdversaryConfig& config, std::span<const double> genuine_mean,
                 double server_lr);

  // Value and (optionally) gradients at (theta, user). Without
  // `distance_gradient` the gradient covers only the smooth terms.
  Terms Evaluate(std::span<const double> theta, std::span<const double> user,
                 nn::Vec* theta_grad, nn::Vec* user_grad,
                 bool distance_gradient = true) const;
  // Parameters whose crafted update equals the genuine mean:
  // theta_downloaded - lr * mean.
  nn::Vec DistanceAnchor() const;
  // Per-term gradients, used for the linearity check.
  void TermGradients(std::span<const double> theta, std::span<const double> user,
                     nn::Vec& exp_grad, nn::Vec& pop_grad, nn::Vec& dis_grad,
                     nn::Vec& user_grad) const;

 private:
  const GlobalParams& downloaded_;
  nn::Vec downloaded_flat_;
  const PopularityEstimator* estimator_;
  AdversaryConfig config_;
  nn::Vec genuine_mean_;  // empty when gamma == 0
  double server_lr_;
  mutable GlobalParams scratch_;
};

struct CraftResult {
  GradientUpdate update;
  std::vector<double> loss_trace;  // objective before each step and at the end
  bool fell_back = false;          // non-finite objective, genuine update used
};

// Runs craft_epochs steps of gradient descent on CraftObjective starting
// from the downloaded parameters and `user_embedding` (updated in place).
// For p = 2 the distance term is handled by its exact proximal step.
// `genuine` is this client's own genuine update, submitted if crafting fails.
CraftResult CraftUpdate(const GlobalParams& downloaded,
                        const PopularityEstimator* estimator,
                        const AdversaryConfig& config,
                        std::span<const double> genuine_mean, double server_lr,
                        nn::Vec& user_embedding, const GradientUpdate& genuine);

// Replaces each malicious user's profile with the target plus `fillers` items
// drawn from the top popularity class (kPopular) or from all items (kRandom),
// then resamples q negatives per positive.
void PoisonProfiles(std::vector<data::UserData>& local_data,
                    const AdversaryConfig& config,
                    const data::PopularityLabels& labels, std::size_t num_items,
                    int q, std::uint64_t seed);

// Mean benign profile length, rounded; default filler count.
std::size_t MeanProfileLength(const data::InteractionDataset& dataset);

}  // namespace fedpoison::attack

#endif  // FEDPOISON_ATTACK_H_
