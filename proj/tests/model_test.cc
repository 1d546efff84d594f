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

#include "fedpoison/model.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gtest/gtest.h"

namespace fedpoison::model {
namespace {

constexpr double kStep = 1e-5;
constexpr double kTolerance = 1e-4;

ModelConfig SmallConfig(std::size_t dim = 4) {
  ModelConfig c;
  c.dim = dim;
  c.tower = {8, 4};
  c.embedding_init_std = 0.5;
  return c;
}

Vec RandomVec(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Vec v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

// Hand-built d = 2 model: one ReLU layer computing u + v, projection (1, 1).
GlobalParams SumModel(const Vec& item) {
  GlobalParams p;
  p.item_embeddings = nn::Tensor2D(1, 2, item);
  p.ffn.layers.push_back({nn::Tensor2D(2, 4, Vec{1, 0, 1, 0, 0, 1, 0, 1}),
                          Vec{0.0, 0.0}, nn::Activation::kRelu});
  p.projection = {1.0, 1.0};
  return p;
}

TEST(ScoreTest, ZeroParametersScoreOneHalf) {
  GlobalParams p = GlobalParams::Init(3, SmallConfig(), 1);
  p.AssignFlat(Vec(p.FlatSize(), 0.0));
  const Vec user(4, 0.0);
  for (ItemId i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(Score(p, user, i), 0.5);
}

TEST(ScoreTest, HandBuiltModelMatchesClosedForm) {
  const GlobalParams p = SumModel({0.1, 0.4});
  const Vec user = {0.3, 0.2};
  EXPECT_NEAR(ScoreLogit(p, user, 0), 1.0, 1e-15);
  EXPECT_NEAR(Score(p, user, 0), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  const Vec negative = {-0.3, -0.9};
  EXPECT_NEAR(ScoreLogit(p, negative, 0), 0.0, 1e-15);
}

TEST(ScoreTest, IdentityTowerReadsFirstUserCoordinate) {
  GlobalParams p;
  p.item_embeddings = nn::Tensor2D(1, 2, Vec{0.7, 0.4});
  nn::Tensor2D eye(4, 4);
  for (std::size_t k = 0; k < 4; ++k) eye.at(k, k) = 1.0;
  p.ffn.layers.push_back({eye, Vec(4, 0.0), nn::Activation::kRelu});
  p.projection = {1.0, 0.0, 0.0, 0.0};
  const Vec user = {0.3, 0.9};
  EXPECT_NEAR(Score(p, user, 0), 1.0 / (1.0 + std::exp(-0.3)), 1e-15);
}

TEST(LossTest, EmptyBatchGivesZeroLossAndNoRows) {
  const GlobalParams p = GlobalParams::Init(3, SmallConfig(), 1);
  const auto g = LocalLossAndGrads(p, Vec(4, 0.1), std::span<const Sample>());
  EXPECT_EQ(g.loss, 0.0);
  EXPECT_TRUE(g.update.item_rows.empty());
  EXPECT_EQ(g.update.Norm(), 0.0);
}

TEST(LossTest, ZeroModelGivesLogTwoPerSample) {
  GlobalParams p = GlobalParams::Init(3, SmallConfig(), 1);
  p.AssignFlat(Vec(p.FlatSize(), 0.0));
  const std::vector<Sample> batch = {{0, 1.0}, {1, 0.0}, {2, 0.0}};
  const auto g = LocalLossAndGrads(p, Vec(4, 0.0), batch);
  EXPECT_NEAR(g.loss, 3.0 * std::log(2.0), 1e-12);
}

TEST(LossTest, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    GlobalParams p = GlobalParams::Init(6, SmallConfig(), 100 + trial);
    Vec user = RandomVec(4, rng, 0.5);
    std::vector<Sample> batch;
    for (ItemId i = 0; i < 6; ++i) {
      if ((i + trial) % 3 != 0) batch.push_back({i, (i + trial) % 2 ? 1.0 : 0.0});
    }
    const auto g = LocalLossAndGrads(p, user, batch);
    Vec flat = p.Flatten();
    const auto loss = [&] {
      GlobalParams q = p;
      q.AssignFlat(flat);
      return LocalLossAndGrads(q, user, batch).loss;
    };
    EXPECT_LE(nn::FiniteDiffCheck(flat, g.update.ToDense(p), loss, kStep), kTolerance)
        << trial;
    const auto user_loss = [&] { return LocalLossAndGrads(p, user, batch).loss; };
    EXPECT_LE(nn::FiniteDiffCheck(user, g.user_grad, user_loss, kStep), kTolerance)
        << trial;
  }
}

TEST(LossTest, UntouchedItemsHaveNoRow) {
  const GlobalParams p = GlobalParams::Init(10, SmallConfig(), 3);
  const std::vector<Sample> batch = {{2, 1.0}, {7, 0.0}};
  const auto g = LocalLossAndGrads(p, Vec(4, 0.1), batch);
  EXPECT_EQ(g.update.item_rows.size(), 2u);
  EXPECT_TRUE(g.update.item_rows.count(2));
  EXPECT_TRUE(g.update.item_rows.count(7));
}

TEST(GradientUpdateTest, WireHasNoUserFieldAndRoundTrips) {
  const GlobalParams p = GlobalParams::Init(5, SmallConfig(), 4);
  const std::vector<Sample> batch = {{1, 1.0}, {3, 0.0}};
  const auto g = LocalLossAndGrads(p, Vec(4, 0.2), batch);
  const nlohmann::json wire = g.update.ToWire();
  const auto& allowed = WireFieldNames();
  for (const auto& [key, value] : wire.items()) {
    EXPECT_NE(std::find(allowed.begin(), allowed.end(), key), allowed.end()) << key;
    EXPECT_EQ(key.find("user"), std::string::npos);
  }
  EXPECT_EQ(GradientUpdate::FromWire(nlohmann::json::parse(wire.dump())), g.update);
}

TEST(GradientUpdateTest, DenseRoundTripDropsZeroRows) {
  const GlobalParams p = GlobalParams::Init(5, SmallConfig(), 5);
  GradientUpdate u = GradientUpdate::ZerosLike(p);
  u.item_rows[2] = {1.0, 2.0, 3.0, 4.0};
  u.item_rows[4] = {0.0, 0.0, 0.0, 0.0};
  u.projection[1] = 7.0;
  const Vec dense = u.ToDense(p);
  EXPECT_EQ(dense.size(), p.FlatSize());
  const GradientUpdate back = GradientUpdate::FromDense(dense, p);
  EXPECT_EQ(back.item_rows.size(), 1u);
  EXPECT_EQ(back.item_rows.at(2), u.item_rows.at(2));
  EXPECT_EQ(back.ToDense(p), dense);
}

TEST(GradientUpdateTest, ValidateRejectsWrongShapes) {
  const GlobalParams p = GlobalParams::Init(5, SmallConfig(), 6);
  GradientUpdate u = GradientUpdate::ZerosLike(p);
  u.item_rows[9] = Vec(4, 0.0);
  EXPECT_THROW(u.Validate(p), std::invalid_argument);
  GradientUpdate v = GradientUpdate::ZerosLike(p);
  v.projection.push_back(1.0);
  EXPECT_THROW(v.Validate(p), std::invalid_argument);
}

TEST(ApplyUpdateTest, SubtractsScaledUpdate) {
  GlobalParams p = GlobalParams::Init(4, SmallConfig(), 7);
  const Vec before = p.Flatten();
  std::mt19937_64 rng(1);
  const Vec dense = RandomVec(p.FlatSize(), rng);
  ApplyUpdate(p, GradientUpdate::FromDense(dense, p), 0.1);
  const Vec after = p.Flatten();
  for (std::size_t k = 0; k < dense.size(); ++k) {
    EXPECT_NEAR(after[k], before[k] - 0.1 * dense[k], 1e-15);
  }
}

TEST(FlattenTest, RoundTripAndOffsets) {
  GlobalParams p = GlobalParams::Init(7, SmallConfig(), 8);
  const Vec flat = p.Flatten();
  EXPECT_EQ(flat.size(), p.FlatSize());
  EXPECT_EQ(p.FfnOffset(), 7u * 4u);
  EXPECT_EQ(p.ProjectionOffset(), p.FlatSize() - p.projection.size());
  GlobalParams q = GlobalParams::Init(7, SmallConfig(), 9);
  q.AssignFlat(flat);
  EXPECT_EQ(q, p);
}

TEST(InitTest, DeterministicPerSeed) {
  EXPECT_EQ(GlobalParams::Init(5, SmallConfig(), 1), GlobalParams::Init(5, SmallConfig(), 1));
  EXPECT_NE(GlobalParams::Init(5, SmallConfig(), 1), GlobalParams::Init(5, SmallConfig(), 2));
  EXPECT_EQ(InitUserEmbedding(3, SmallConfig(), 1), InitUserEmbedding(3, SmallConfig(), 1));
  EXPECT_NE(InitUserEmbedding(3, SmallConfig(), 1), InitUserEmbedding(4, SmallConfig(), 1));
}

TEST(ItemScorerTest, MatchesPerItemLogits) {
  const GlobalParams p = GlobalParams::Init(25, SmallConfig(), 10);
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const Vec user = RandomVec(4, rng);
    const Vec logits = ItemScorer(p).Logits(user);
    ASSERT_EQ(logits.size(), 25u);
    for (ItemId i = 0; i < 25; ++i) {
      EXPECT_NEAR(logits[i], ScoreLogit(p, user, i), 1e-12);
    }
  }
}

TEST(RecommendTopKTest, MatchesBruteForceSort) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> coarse(0, 5);
  for (int trial = 0; trial < 50; ++trial) {
    Vec logits(30);
    for (double& x : logits) x = coarse(rng);  // many ties
    std::vector<ItemId> excluded;
    for (ItemId i = 0; i < 30; ++i) {
      if (coarse(rng) == 0) excluded.push_back(i);
    }
    std::vector<ItemId> expected;
    for (ItemId i = 0; i < 30; ++i) {
      if (std::find(excluded.begin(), excluded.end(), i) == excluded.end()) {
        expected.push_back(i);
      }
    }
    std::stable_sort(expected.begin(), expected.end(),
                     [&](ItemId a, ItemId b) { return logits[a] > logits[b]; });
    const std::size_t k = 1 + trial % 10;
    expected.resize(std::min(k, expected.size()));
    EXPECT_EQ(RecommendTopK(logits, k, excluded), expected);
  }
}

TEST(RecommendTopKTest, FewerCandidatesThanK) {
  const Vec logits = {0.1, 0.9, 0.5};
  const std::vector<ItemId> excluded = {1};
  EXPECT_EQ(RecommendTopK(logits, 10, excluded), (std::vector<ItemId>{2, 0}));
}

TEST(TrainLocalTest, UpdateIsParameterDisplacementOverLearningRate) {
  const GlobalParams p = GlobalParams::Init(12, SmallConfig(), 12);
  data::UserData user;
  user.user = 0;
  user.positives = {1, 4, 5};
  user.negatives = {0, 2, 3, 6, 7, 8};
  user.holdout = 9;
  Vec embedding = InitUserEmbedding(0, SmallConfig(), 1);
  const Vec start = embedding;
  std::mt19937_64 rng(5);
  const double lr = 0.05;
  const auto result = TrainLocal(p, embedding, user, lr, 4, rng);

  // Replay the same shuffled pass by hand.
  GlobalParams local = p;
  Vec replay = start;
  std::mt19937_64 rng2(5);
  auto samples = TrainingSamples(user);
  std::shuffle(samples.begin(), samples.end(), rng2);
  for (std::size_t s = 0; s < samples.size(); s += 4) {
    const std::span<const Sample> batch(samples.data() + s,
                                        std::min<std::size_t>(4, samples.size() - s));
    const auto g = LocalLossAndGrads(local, replay, batch);
    ApplyUpdate(local, g.update, lr);
    nn::Axpy(-lr, g.user_grad, replay);
  }
  const Vec before = p.Flatten();
  const Vec after = local.Flatten();
  const Vec dense = result.update.ToDense(p);
  for (std::size_t k = 0; k < dense.size(); ++k) {
    EXPECT_NEAR(dense[k], (before[k] - after[k]) / lr, 1e-9);
  }
  for (std::size_t k = 0; k < embedding.size(); ++k) {
    EXPECT_NEAR(embedding[k], replay[k], 1e-15);
  }
  EXPECT_FALSE(result.update.item_rows.count(9));
  EXPECT_FALSE(result.update.item_rows.count(10));
  EXPECT_GT(result.loss, 0.0);
}

TEST(TrainLocalTest, RejectsZeroBatch) {
  const GlobalParams p = GlobalParams::Init(4, SmallConfig(), 1);
  data::UserData user{0, {1}, {2}, 3};
  Vec e(4, 0.0);
  std::mt19937_64 rng(1);
  EXPECT_THROW(TrainLocal(p, e, user, 0.1, 0, rng), std::invalid_argument);
}

}  // namespace
}  // namespace fedpoison::model
