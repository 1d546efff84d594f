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

#include "fedpoison/eval.h"

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include "gtest/gtest.h"

namespace fedpoison::eval {
namespace {

model::ModelConfig SmallConfig() {
  model::ModelConfig c;
  c.dim = 4;
  c.tower = {6, 3};
  c.embedding_init_std = 0.5;
  return c;
}

struct Fixture {
  data::InteractionDataset dataset;
  model::GlobalParams params;
  std::vector<Vec> users;
  std::vector<UserId> ids;
};

// Users get random positives and a holdout; embeddings are random.
Fixture MakeFixture(std::size_t num_users, std::size_t num_items,
                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Fixture f;
  f.dataset.num_users = num_users;
  f.dataset.num_items = num_items;
  f.params = model::GlobalParams::Init(num_items, SmallConfig(), seed);
  for (UserId u = 0; u < num_users; ++u) {
    std::vector<ItemId> items(num_items);
    std::iota(items.begin(), items.end(), 0);
    std::shuffle(items.begin(), items.end(), rng);
    const std::size_t n = 1 + rng() % std::max<std::size_t>(1, num_items / 3);
    data::UserData ud;
    ud.user = u;
    ud.holdout = items[0];
    ud.positives.assign(items.begin() + 1, items.begin() + 1 + n);
    std::sort(ud.positives.begin(), ud.positives.end());
    f.dataset.users.push_back(ud);
    f.users.push_back(model::InitUserEmbedding(u, SmallConfig(), seed));
    f.ids.push_back(u);
  }
  return f;
}

// Full sort by score, ties to the lower index.
std::vector<ItemId> BruteRanking(const Fixture& f, UserId u) {
  const data::UserData& ud = *f.dataset.Find(u);
  std::vector<ItemId> cand;
  for (ItemId i = 0; i < f.dataset.num_items; ++i) {
    if (!std::binary_search(ud.positives.begin(), ud.positives.end(), i)) {
      cand.push_back(i);
    }
  }
  std::vector<double> score(f.dataset.num_items);
  for (ItemId i : cand) score[i] = model::Score(f.params, f.users[u], i);
  std::stable_sort(cand.begin(), cand.end(),
                   [&](ItemId a, ItemId b) { return score[a] > score[b]; });
  return cand;
}

bool InTop(const std::vector<ItemId>& ranking, std::size_t k, ItemId item) {
  const auto end = ranking.begin() + static_cast<std::ptrdiff_t>(std::min(k, ranking.size()));
  return std::find(ranking.begin(), end, item) != end;
}

TEST(RankingTest, MatchesFullSortOracle) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Fixture f = MakeFixture(3 + seed % 5, 6 + seed * 4, seed);
    for (std::size_t k : {1u, 3u, 5u, 10u}) {
      for (ItemId target : {0u, 2u, 5u}) {
        double er = 0.0;
        double hr = 0.0;
        for (UserId u : f.ids) {
          const auto ranking = BruteRanking(f, u);
          er += InTop(ranking, k, target);
          hr += InTop(ranking, k, f.dataset.Find(u)->holdout);
        }
        er /= static_cast<double>(f.ids.size());
        hr /= static_cast<double>(f.ids.size());
        const auto m = EvaluateRanking(f.params, f.users, f.dataset, f.ids, k, k, target);
        EXPECT_DOUBLE_EQ(m.exposure_rate, er);
        EXPECT_DOUBLE_EQ(m.hit_ratio, hr);
        EXPECT_DOUBLE_EQ(ExposureRate(f.params, f.users, f.dataset, f.ids, k, target), er);
        EXPECT_DOUBLE_EQ(HitRatio(f.params, f.users, f.dataset, f.ids, k), hr);
      }
    }
  }
}

TEST(RankingTest, FullListExposesEverything) {
  Fixture f = MakeFixture(6, 12, 3);
  for (auto& u : f.dataset.users) {
    u.positives.erase(std::remove(u.positives.begin(), u.positives.end(), 11u),
                      u.positives.end());
  }
  EXPECT_DOUBLE_EQ(ExposureRate(f.params, f.users, f.dataset, f.ids, 12, 11), 1.0);
  EXPECT_DOUBLE_EQ(HitRatio(f.params, f.users, f.dataset, f.ids, 12), 1.0);
}

TEST(RankingTest, TargetInEveryProfileIsNeverExposed) {
  Fixture f = MakeFixture(5, 10, 4);
  for (auto& u : f.dataset.users) {
    if (u.holdout == 3) u.holdout = 9;
    u.positives.erase(std::remove(u.positives.begin(), u.positives.end(), 9u),
                      u.positives.end());
    if (!std::binary_search(u.positives.begin(), u.positives.end(), 3u)) {
      u.positives.push_back(3);
      std::sort(u.positives.begin(), u.positives.end());
    }
  }
  EXPECT_EQ(ExposureRate(f.params, f.users, f.dataset, f.ids, 10, 3), 0.0);
}

TEST(RankingTest, MonotoneInK) {
  const Fixture f = MakeFixture(20, 40, 5);
  double er = 0.0;
  double hr = 0.0;
  for (std::size_t k = 1; k <= 40; ++k) {
    const auto m = EvaluateRanking(f.params, f.users, f.dataset, f.ids, k, k, 7);
    EXPECT_GE(m.exposure_rate, er);
    EXPECT_GE(m.hit_ratio, hr);
    er = m.exposure_rate;
    hr = m.hit_ratio;
  }
}

TEST(RankingTest, MissingUsersAreSkipped) {
  Fixture f = MakeFixture(4, 10, 6);
  std::vector<UserId> ids = f.ids;
  ids.push_back(99);
  const auto a = EvaluateRanking(f.params, f.users, f.dataset, f.ids, 5, 5, 1);
  const auto b = EvaluateRanking(f.params, f.users, f.dataset, ids, 5, 5, 1);
  EXPECT_EQ(a.exposure_rate, b.exposure_rate);
  EXPECT_EQ(a.hit_ratio, b.hit_ratio);
  EXPECT_THROW(EvaluateRanking(f.params, f.users, f.dataset, ids, 0, 5, 1),
               std::invalid_argument);
}

TEST(RankingTest, UntrainedModelHitsAtChance) {
  model::ModelConfig cfg;
  cfg.dim = 8;
  cfg.tower = {16, 8};
  cfg.embedding_init_std = 1.0;
  const auto params = model::GlobalParams::Init(100, cfg, 1);
  data::InteractionDataset ds;
  ds.num_users = 200;
  ds.num_items = 100;
  std::mt19937_64 rng(2);
  std::vector<Vec> users;
  std::vector<UserId> ids;
  for (UserId u = 0; u < 200; ++u) {
    ds.users.push_back({u, {}, {}, static_cast<ItemId>(rng() % 100)});
    users.push_back(model::InitUserEmbedding(u, cfg, 3));
    ids.push_back(u);
  }
  const double hr = HitRatio(params, users, ds, ids, 10);
  EXPECT_NEAR(hr, 0.1, 0.05);
}

TEST(MacroF1Test, HandExamples) {
  const std::vector<int> truth = {0, 0, 1, 1, 2, 2};
  EXPECT_DOUBLE_EQ(MacroF1(truth, truth, 3), 1.0);
  const std::vector<int> all_zero(6, 0);
  EXPECT_NEAR(MacroF1(all_zero, truth, 3), (2.0 / 4.0) / 3.0, 1e-15);
  EXPECT_THROW(MacroF1(std::vector<int>{0}, truth, 3), std::invalid_argument);
}

TEST(MacroF1Test, MatchesConfusionMatrixOracle) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> pred(10);
    std::vector<int> truth(10);
    for (int i = 0; i < 10; ++i) {
      pred[i] = static_cast<int>(rng() % 3);
      truth[i] = static_cast<int>(rng() % 3);
    }
    int confusion[3][3] = {};
    for (int i = 0; i < 10; ++i) ++confusion[truth[i]][pred[i]];
    double sum = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double tp = confusion[c][c];
      double fp = 0.0;
      double fn = 0.0;
      for (int o = 0; o < 3; ++o) {
        if (o == c) continue;
        fp += confusion[o][c];
        fn += confusion[c][o];
      }
      const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
      const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
      sum += precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    }
    EXPECT_NEAR(MacroF1(pred, truth, 3), sum / 3.0, 1e-12);
  }
}

TEST(HistogramKlTest, IdenticalIsZeroAndNonNegative) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> a(300);
  std::vector<double> b(200);
  for (double& x : a) x = dist(rng);
  for (double& x : b) x = 2.0 + 0.5 * dist(rng);
  EXPECT_NEAR(HistogramKl(a, a, 50), 0.0, 1e-15);
  EXPECT_GT(HistogramKl(a, b, 50), 0.1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(1 + rng() % 40);
    std::vector<double> q(1 + rng() % 40);
    for (double& x : p) x = dist(rng);
    for (double& x : q) x = dist(rng) * 3.0;
    EXPECT_GE(HistogramKl(p, q, 1 + rng() % 60), 0.0);
  }
  EXPECT_EQ(HistogramKl(std::vector<double>(5, 1.0), std::vector<double>(3, 1.0), 10), 0.0);
  EXPECT_THROW(HistogramKl({}, a, 10), std::invalid_argument);
  EXPECT_THROW(HistogramKl(a, a, 0), std::invalid_argument);
}

TEST(HistogramKlTest, HandComputedTwoBins) {
  // Range [0, 1], two bins. P counts (2, 0) -> (3, 1)/4; Q counts (0, 2) -> (1, 3)/4.
  const std::vector<double> p = {0.0, 0.1};
  const std::vector<double> q = {1.0, 0.9};
  const double expected = 0.75 * std::log(3.0) + 0.25 * std::log(1.0 / 3.0);
  EXPECT_NEAR(HistogramKl(p, q, 2), expected, 1e-15);
}

TEST(GradKlDivergenceTest, IdenticalSidesGiveZero) {
  const auto like = model::GlobalParams::Init(5, SmallConfig(), 1);
  auto u = model::GradientUpdate::ZerosLike(like);
  u.item_rows[1] = {1.0, -2.0, 0.5, 3.0};
  u.projection = {0.1, 0.2, 0.3};
  const std::vector<model::GradientUpdate> side = {u, u};
  EXPECT_NEAR(GradKlDivergence(side, side, 50), 0.0, 1e-15);
  EXPECT_THROW(GradKlDivergence(side, {}, 50), std::invalid_argument);
}

TEST(MetricCsvTest, HeaderAndRowFormat) {
  std::ostringstream out;
  WriteMetricsHeader(out);
  WriteMetricRow(out, {3, 0.5, 0.25, std::nullopt, 0.875, 1.5});
  WriteMetricRow(out, {4, 1.0, 0.0, 0.01, std::nullopt, 0.0});
  EXPECT_EQ(out.str(),
            "epoch,er_at_k,hr_at_k,kl,f1,aggregate_norm\n"
            "3,0.500000,0.250000,,0.875000,1.5\n"
            "4,1.000000,0.000000,0.010000,,0\n");
}

TEST(ExportEmbeddingsTest, OneRowPerItem) {
  const auto params = model::GlobalParams::Init(3, SmallConfig(), 1);
  data::PopularityLabels labels;
  labels.classes = {2, 0, 1};
  labels.counts = {3, 1, 2};
  std::ostringstream out;
  ExportEmbeddingsCsv(out, params, labels, 1);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "item_id,popularity_class,is_target,e0,e1,e2,e3");
  std::getline(in, line);
  EXPECT_EQ(line.rfind("0,2,0,", 0), 0u);
  std::getline(in, line);
  EXPECT_EQ(line.rfind("1,0,1,", 0), 0u);
  std::getline(in, line);
  EXPECT_EQ(std::count(line.begin(), line.end(), ','), 6);
  EXPECT_FALSE(std::getline(in, line));
}

}  // namespace
}  // namespace fedpoison::eval
