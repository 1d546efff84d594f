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
#include <numeric>
#include <set>

#include "fedpoison/synthetic.h"
#include "gtest/gtest.h"

namespace fedpoison::federation {
namespace {

struct World {
  data::RatingTable table;
  data::InteractionDataset dataset;
  data::PopularityLabels labels;
};

const World& SmallWorld() {
  static const World* world = [] {
    data::SyntheticConfig cfg;
    cfg.users = 60;
    cfg.items = 40;
    cfg.interactions = 700;
    cfg.clusters = 3;
    auto* w = new World;
    w->table = data::GenerateSynthetic(cfg);
    w->dataset = data::BuildDataset(w->table, 2, 5);
    w->labels = data::AssignPopularityLabels(w->table);
    return w;
  }();
  return *world;
}

model::ModelConfig SmallModel() {
  model::ModelConfig c;
  c.dim = 8;
  c.tower = {8, 4};
  return c;
}

FederationConfig SmallFederation() {
  FederationConfig c;
  c.client_fraction = 0.25;
  c.lr = 0.01;
  c.batch_size = 16;
  return c;
}

attack::AdversaryConfig PipAdversary(const World& w) {
  attack::AdversaryConfig a;
  a.mode = attack::AttackMode::kPipAttack;
  a.target = data::SelectTargetItem(w.labels);
  std::vector<UserId> clients;
  for (const auto& u : w.dataset.users) clients.push_back(u.user);
  a.malicious = attack::ChooseMaliciousUsers(clients, 0.1, 9);
  a.alpha = 5.0;
  a.craft_epochs = 3;
  return a;
}

attack::EstimatorConfig FastEstimator() {
  attack::EstimatorConfig e;
  e.epochs = 5;
  return e;
}

void ExpectSameState(const Simulation& a, const Simulation& b) {
  EXPECT_EQ(a.global(), b.global());
  ASSERT_EQ(a.user_embeddings().size(), b.user_embeddings().size());
  for (std::size_t u = 0; u < a.user_embeddings().size(); ++u) {
    EXPECT_EQ(a.user_embeddings()[u], b.user_embeddings()[u]) << u;
  }
  EXPECT_EQ(a.next_round(), b.next_round());
}

TEST(SampleClientsTest, SizeOrderAndDeterminism) {
  std::vector<UserId> clients(100);
  std::iota(clients.begin(), clients.end(), 0);
  EXPECT_EQ(SampleClients(clients, 1.0, 1), clients);
  const auto a = SampleClients(clients, 0.1, 7);
  EXPECT_EQ(a.size(), 10u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(std::set<UserId>(a.begin(), a.end()).size(), 10u);
  EXPECT_EQ(a, SampleClients(clients, 0.1, 7));
  EXPECT_NE(a, SampleClients(clients, 0.1, 8));
  EXPECT_EQ(SampleClients(clients, 0.001, 1).size(), 1u);
  EXPECT_THROW(SampleClients(clients, 0.0, 1), std::invalid_argument);
  EXPECT_THROW(SampleClients(clients, 1.5, 1), std::invalid_argument);
}

TEST(ServerStepTest, IdenticalUpdatesMoveByLearningRate) {
  auto params = model::GlobalParams::Init(5, SmallModel(), 1);
  const Vec before = params.Flatten();
  auto g = model::GradientUpdate::ZerosLike(params);
  g.item_rows[3] = Vec(8, 0.5);
  g.projection.assign(4, -1.0);
  const std::vector<model::GradientUpdate> updates(4, g);
  const auto agg = defense::AggregateUpdates(updates, defense::AggregationRule::kMean, 0, params);
  EXPECT_EQ(agg.ToDense(params), g.ToDense(params));
  model::ApplyUpdate(params, agg, 0.1);
  const Vec after = params.Flatten();
  const Vec dense = g.ToDense(params);
  for (std::size_t k = 0; k < after.size(); ++k) {
    EXPECT_NEAR(after[k], before[k] - 0.1 * dense[k], 1e-15);
  }
}

TEST(ServerStepTest, ThreeClientHandAverage) {
  auto params = model::GlobalParams::Init(4, SmallModel(), 2);
  std::vector<model::GradientUpdate> updates(3, model::GradientUpdate::ZerosLike(params));
  updates[0].item_rows[0] = Vec(8, 3.0);
  updates[1].item_rows[0] = Vec(8, 0.0);
  updates[2].item_rows[2] = Vec(8, 6.0);
  updates[0].projection = {3.0, 0.0, 0.0, 0.0};
  const Vec row0 = Vec(params.item_embeddings.row(0).begin(), params.item_embeddings.row(0).end());
  const Vec row2 = Vec(params.item_embeddings.row(2).begin(), params.item_embeddings.row(2).end());
  const double h0 = params.projection[0];
  const auto agg = defense::AggregateUpdates(updates, defense::AggregationRule::kMean, 0, params);
  model::ApplyUpdate(params, agg, 0.5);
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_NEAR(params.item_embeddings.at(0, k), row0[k] - 0.5 * 1.0, 1e-15);
    EXPECT_NEAR(params.item_embeddings.at(2, k), row2[k] - 0.5 * 2.0, 1e-15);
  }
  EXPECT_NEAR(params.projection[0], h0 - 0.5 * 1.0, 1e-15);
}

TEST(ServerStepTest, ZeroUpdatesLeaveParametersUnchanged) {
  auto params = model::GlobalParams::Init(4, SmallModel(), 3);
  const auto before = params;
  const std::vector<model::GradientUpdate> updates(3, model::GradientUpdate::ZerosLike(params));
  model::ApplyUpdate(params,
                     defense::AggregateUpdates(updates, defense::AggregationRule::kMean, 0, params),
                     0.1);
  EXPECT_EQ(params, before);
}

TEST(SimulationTest, TrafficCarriesNoUserEmbedding) {
  const World& w = SmallWorld();
  Simulation sim(w.dataset, w.labels, SmallModel(), SmallFederation(), 1);
  sim.SetAdversary(PipAdversary(w), 2, FastEstimator());
  std::size_t messages = 0;
  sim.SetTrafficObserver([&](int, UserId, const std::string& message) {
    ++messages;
    const auto j = nlohmann::json::parse(message);
    const auto& allowed = model::WireFieldNames();
    for (const auto& [key, value] : j.items()) {
      EXPECT_NE(std::find(allowed.begin(), allowed.end(), key), allowed.end()) << key;
    }
    EXPECT_EQ(message.find("user"), std::string::npos);
    EXPECT_EQ(model::GradientUpdate::FromWire(j).ToWire().dump(), message);
  });
  std::size_t participants = 0;
  for (int r = 0; r < 3; ++r) participants += sim.RunRound().participants.size();
  EXPECT_EQ(messages, participants);
}

TEST(SimulationTest, SameSeedsSameResult) {
  const World& w = SmallWorld();
  Simulation a(w.dataset, w.labels, SmallModel(), SmallFederation(), 1);
  Simulation b(w.dataset, w.labels, SmallModel(), SmallFederation(), 1);
  for (int r = 0; r < 3; ++r) {
    a.RunRound();
    b.RunRound();
  }
  ExpectSameState(a, b);
}

TEST(SimulationTest, ThreadCountDoesNotChangeResults) {
  const World& w = SmallWorld();
  FederationConfig parallel = SmallFederation();
  parallel.threads = 3;
  Simulation a(w.dataset, w.labels, SmallModel(), SmallFederation(), 1);
  Simulation b(w.dataset, w.labels, SmallModel(), parallel, 1);
  a.SetAdversary(PipAdversary(w), 2, FastEstimator());
  b.SetAdversary(PipAdversary(w), 2, FastEstimator());
  for (int r = 0; r < 4; ++r) {
    a.RunRound();
    b.RunRound();
  }
  ExpectSameState(a, b);
}

TEST(SimulationTest, CheckpointResumeMatchesContinuousRun) {
  const World& w = SmallWorld();
  for (bool resample : {false, true}) {
    for (auto mode : {attack::AttackMode::kPipAttack, attack::AttackMode::kPopular}) {
      FederationConfig fc = SmallFederation();
      fc.resample_negatives = resample;
      attack::AdversaryConfig adv = PipAdversary(w);
      adv.mode = mode;
      adv.fillers = 5;
      Simulation continuous(w.dataset, w.labels, SmallModel(), fc, 1);
      continuous.SetAdversary(adv, 2, FastEstimator());
      Simulation first(w.dataset, w.labels, SmallModel(), fc, 1);
      first.SetAdversary(adv, 2, FastEstimator());
      for (int r = 0; r < 3; ++r) {
        continuous.RunRound();
        first.RunRound();
      }
      const std::string snapshot = first.Checkpoint().dump();
      Simulation resumed(w.dataset, w.labels, SmallModel(), fc, 99);
      resumed.SetAdversary(adv, 2, FastEstimator());
      resumed.Restore(nlohmann::json::parse(snapshot));
      EXPECT_TRUE(resumed.attack_active());
      for (int r = 0; r < 3; ++r) {
        continuous.RunRound();
        resumed.RunRound();
      }
      ExpectSameState(continuous, resumed);
    }
  }
}

TEST(SimulationTest, RestoreRejectsMismatchedShape) {
  const World& w = SmallWorld();
  Simulation sim(w.dataset, w.labels, SmallModel(), SmallFederation(), 1);
  auto j = sim.Checkpoint();
  j["dim"] = 3;
  EXPECT_THROW(sim.Restore(j), std::runtime_error);
  j["format"] = "other";
  EXPECT_THROW(sim.Restore(j), std::runtime_error);
}

TEST(SimulationTest, ZeroMaliciousFractionEqualsBenignTraining) {
  const World& w = SmallWorld();
  Simulation benign(w.dataset, w.labels, SmallModel(), SmallFederation(), 1);
  Simulation empty(w.dataset, w.labels, SmallModel(), SmallFederation(), 1);
  attack::AdversaryConfig adv = PipAdversary(w);
  adv.malicious.clear();
  adv.alpha = 0.0;
  empty.SetAdversary(adv, 1);
  for (int r = 0; r < 3; ++r) {
    benign.RunRound();
    const auto report = empty.RunRound();
    EXPECT_TRUE(report.malicious_participants.empty());
    EXPECT_FALSE(report.kl.has_value());
  }
  ExpectSameState(benign, empty);
}

TEST(SimulationTest, AttackAfterLastRoundIsBenign) {
  const World& w = SmallWorld();
  Simulation benign(w.dataset, w.labels, SmallModel(), SmallFederation(), 1);
  Simulation late(w.dataset, w.labels, SmallModel(), SmallFederation(), 1);
  late.SetAdversary(PipAdversary(w), 100, FastEstimator());
  for (int r = 0; r < 5; ++r) {
    benign.RunRound();
    EXPECT_TRUE(late.RunRound().malicious_participants.empty());
  }
  EXPECT_FALSE(late.attack_active());
  EXPECT_FALSE(late.estimator().has_value());
  ExpectSameState(benign, late);
  EXPECT_EQ(late.Evaluate().exposure_rate, 0.0);
}

TEST(SimulationTest, ActiveAttackReportsKlAndEstimatorF1) {
  const World& w = SmallWorld();
  FederationConfig fc = SmallFederation();
  fc.force_include_malicious = true;
  Simulation sim(w.dataset, w.labels, SmallModel(), fc, 1);
  const auto adv = PipAdversary(w);
  sim.SetAdversary(adv, 2, FastEstimator());
  const auto r1 = sim.RunRound();
  EXPECT_TRUE(r1.malicious_participants.empty());
  const auto r2 = sim.RunRound();
  EXPECT_EQ(r2.malicious_participants, adv.malicious);
  ASSERT_TRUE(r2.kl.has_value());
  EXPECT_GE(*r2.kl, 0.0);
  ASSERT_TRUE(r2.f1.has_value());
  EXPECT_EQ(r2.craft_traces.size(), adv.malicious.size());
  EXPECT_TRUE(sim.estimator().has_value());
  EXPECT_TRUE(sim.estimator()->frozen());
  EXPECT_FALSE(sim.RunRound().f1.has_value());
  for (UserId u : sim.benign_users()) EXPECT_FALSE(adv.IsMalicious(u));
}

TEST(SimulationTest, InfeasibleAggregationAbortsRoundWithoutSideEffects) {
  const World& w = SmallWorld();
  FederationConfig fc = SmallFederation();
  fc.rule = defense::AggregationRule::kBulyan;
  fc.byzantine = 10;
  Simulation sim(w.dataset, w.labels, SmallModel(), fc, 1);
  const auto before_params = sim.global();
  const std::vector<Vec> before_users(sim.user_embeddings().begin(),
                                      sim.user_embeddings().end());
  EXPECT_THROW(sim.RunRound(), defense::InfeasibleAggregation);
  EXPECT_EQ(sim.next_round(), 1);
  EXPECT_EQ(sim.global(), before_params);
  for (std::size_t u = 0; u < before_users.size(); ++u) {
    EXPECT_EQ(sim.user_embeddings()[u], before_users[u]);
  }
}

TEST(FederationConfigTest, ValidateRejectsBadValues) {
  FederationConfig c;
  EXPECT_NO_THROW(c.Validate());
  c.client_fraction = 0.0;
  EXPECT_THROW(c.Validate(), std::invalid_argument);
  c = FederationConfig{};
  c.threads = 0;
  EXPECT_THROW(c.Validate(), std::invalid_argument);
  c = FederationConfig{};
  c.lr = -1.0;
  EXPECT_THROW(c.Validate(), std::invalid_argument);
}

}  // namespace
}  // namespace fedpoison::federation
