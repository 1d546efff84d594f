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
#include <numeric>
#include <random>
#include <set>

#include "fedpoison/eval.h"
#include "gtest/gtest.h"

namespace fedpoison::attack {
namespace {

// Items cycle through the three classes; each class sits around its own center.
struct Clusters {
  nn::Tensor2D embeddings;
  data::PopularityLabels labels;
};

Clusters MakeClusters(std::size_t items, std::size_t dim, double spread,
                      bool random_labels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, spread);
  Clusters c{nn::Tensor2D(items, dim), {}};
  c.labels.counts.assign(items, 1);
  std::uniform_int_distribution<int> cls(0, 2);
  for (std::size_t i = 0; i < items; ++i) {
    const int label = random_labels ? cls(rng) : static_cast<int>(i % 3);
    c.labels.classes.push_back(label);
    for (std::size_t k = 0; k < dim; ++k) {
      const double center = random_labels ? 0.0 : (k % 3 == static_cast<std::size_t>(label) ? 3.0 : 0.0);
      c.embeddings.at(i, k) = center + noise(rng);
    }
  }
  return c;
}

EstimatorConfig FastConfig() {
  EstimatorConfig c;
  c.epochs = 100;
  return c;
}

TEST(SplitItemsTest, StratifiedDisjointAndDeterministic) {
  const Clusters c = MakeClusters(100, 4, 1.0, false, 1);
  const ItemSplit s = SplitItems(c.labels, 7, 0.2, 3);
  std::set<ItemId> train(s.train.begin(), s.train.end());
  for (ItemId i : s.heldout) EXPECT_FALSE(train.count(i));
  EXPECT_EQ(s.train.size() + s.heldout.size(), 99u);
  EXPECT_FALSE(train.count(7));
  EXPECT_EQ(std::count(s.heldout.begin(), s.heldout.end(), 7u), 0);
  for (int cls = 0; cls < 3; ++cls) {
    const auto in_heldout = std::count_if(s.heldout.begin(), s.heldout.end(),
                                          [&](ItemId i) { return c.labels.classes[i] == cls; });
    EXPECT_GE(in_heldout, 6);
    EXPECT_LE(in_heldout, 7);
  }
  const ItemSplit again = SplitItems(c.labels, 7, 0.2, 3);
  EXPECT_EQ(again.train, s.train);
  EXPECT_EQ(again.heldout, s.heldout);
  EXPECT_THROW(SplitItems(c.labels, 7, 1.0, 3), std::invalid_argument);
}

TEST(TrainEstimatorTest, SeparableClustersAreLearned) {
  const Clusters c = MakeClusters(150, 6, 0.3, false, 2);
  std::vector<ItemId> all(150);
  std::iota(all.begin(), all.end(), 0);
  const auto est = TrainPopularityEstimator(c.embeddings, c.labels, all, FastConfig());
  EXPECT_TRUE(est.frozen());
  EXPECT_GE(eval::ClassifierF1(est, c.embeddings, c.labels, all), 0.99);
}

TEST(TrainEstimatorTest, RandomLabelsStayNearChance) {
  const Clusters c = MakeClusters(600, 6, 1.0, true, 3);
  const ItemSplit s = SplitItems(c.labels, 0, 0.3, 4);
  const auto est = TrainPopularityEstimator(c.embeddings, c.labels, s.train, FastConfig());
  const double f1 = eval::ClassifierF1(est, c.embeddings, c.labels, s.heldout);
  // A classifier collapsed onto one class scores (1/2) / 3 on balanced data.
  constexpr double kChanceBand = 0.2;
  EXPECT_GT(f1, 1.0 / 3.0 - kChanceBand);
  EXPECT_LT(f1, 1.0 / 3.0 + kChanceBand);
}

TEST(TrainEstimatorTest, MissingClassIsRejected) {
  Clusters c = MakeClusters(30, 4, 0.3, false, 5);
  std::vector<ItemId> no_high;
  for (ItemId i = 0; i < 30; ++i) {
    if (c.labels.classes[i] != 2) no_high.push_back(i);
  }
  EXPECT_THROW(TrainPopularityEstimator(c.embeddings, c.labels, no_high, FastConfig()),
               std::invalid_argument);
}

TEST(TrainEstimatorTest, DeterministicPerSeed) {
  const Clusters c = MakeClusters(60, 4, 0.5, false, 6);
  std::vector<ItemId> all(60);
  std::iota(all.begin(), all.end(), 0);
  EstimatorConfig cfg = FastConfig();
  cfg.epochs = 10;
  const auto a = TrainPopularityEstimator(c.embeddings, c.labels, all, cfg);
  const auto b = TrainPopularityEstimator(c.embeddings, c.labels, all, cfg);
  EXPECT_EQ(a.ToJson().dump(), b.ToJson().dump());
}

TEST(PopularityEstimatorTest, FrozenRejectsMutation) {
  const Clusters c = MakeClusters(30, 4, 0.3, false, 7);
  std::vector<ItemId> all(30);
  std::iota(all.begin(), all.end(), 0);
  EstimatorConfig cfg = FastConfig();
  cfg.epochs = 2;
  auto est = TrainPopularityEstimator(c.embeddings, c.labels, all, cfg);
  EXPECT_THROW(est.mutable_net(), std::logic_error);
}

TEST(PopularityEstimatorTest, JsonRoundTripPreservesPredictions) {
  const Clusters c = MakeClusters(30, 4, 0.3, false, 8);
  std::vector<ItemId> all(30);
  std::iota(all.begin(), all.end(), 0);
  EstimatorConfig cfg = FastConfig();
  cfg.epochs = 5;
  const auto est = TrainPopularityEstimator(c.embeddings, c.labels, all, cfg);
  const auto back = PopularityEstimator::FromJson(nlohmann::json::parse(est.ToJson().dump()));
  EXPECT_TRUE(back.frozen());
  for (ItemId i : all) {
    EXPECT_EQ(back.Probabilities(c.embeddings.row(i)), est.Probabilities(c.embeddings.row(i)));
  }
}

TEST(PopularityEstimatorTest, ProbabilitiesSumToOneAndPredictIsArgmax) {
  const Clusters c = MakeClusters(30, 4, 0.3, false, 9);
  std::vector<ItemId> all(30);
  std::iota(all.begin(), all.end(), 0);
  EstimatorConfig cfg = FastConfig();
  cfg.epochs = 3;
  const auto est = TrainPopularityEstimator(c.embeddings, c.labels, all, cfg);
  for (ItemId i : all) {
    const nn::Vec p = est.Probabilities(c.embeddings.row(i));
    EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-12);
    EXPECT_EQ(est.Predict(c.embeddings.row(i)),
              std::max_element(p.begin(), p.end()) - p.begin());
  }
  EXPECT_THROW(est.NegLogLikelihood(c.embeddings.row(0), 3), std::invalid_argument);
}

TEST(PopularityEstimatorTest, BatchLossGradientMatchesFiniteDifferences) {
  const Clusters c = MakeClusters(12, 4, 1.0, false, 10);
  std::vector<ItemId> all(12);
  std::iota(all.begin(), all.end(), 0);
  EstimatorConfig cfg = FastConfig();
  cfg.epochs = 1;
  auto est = TrainPopularityEstimator(c.embeddings, c.labels, all, cfg);
  PopularityEstimator open = PopularityEstimator::FromJson([&] {
    auto j = est.ToJson();
    j["frozen"] = false;
    return j;
  }());
  nn::MLPGrads grads = nn::MLPGrads::ZerosLike(open.net());
  open.BatchLoss(c.embeddings, all, c.labels.classes, &grads);
  nn::Vec flat = nn::Flatten(open.net());
  const auto loss = [&] {
    nn::AssignFlat(flat, 0, open.mutable_net());
    return open.BatchLoss(c.embeddings, all, c.labels.classes, nullptr);
  };
  EXPECT_LE(nn::FiniteDiffCheck(flat, nn::Flatten(grads), loss, 1e-5), 1e-4);
}

}  // namespace
}  // namespace fedpoison::attack
