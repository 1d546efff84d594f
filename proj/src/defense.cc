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

#include "fedpoison/defense.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace fedpoison::defense {
namespace {

std::size_t CheckShapes(std::span<const Vec> vectors) {
  if (vectors.empty()) throw std::invalid_argument("aggregation: no vectors");
  const std::size_t dim = vectors.front().size();
  for (const Vec& v : vectors) {
    if (v.size() != dim) {
      throw std::invalid_argument("aggregation: vectors differ in length");
    }
  }
  return dim;
}

double SquaredDistance(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}

std::vector<std::vector<double>> PairwiseSquaredDistances(
    std::span<const Vec> vectors) {
  const std::size_t n = vectors.size();
  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      dist[i][j] = dist[j][i] = SquaredDistance(vectors[i], vectors[j]);
    }
  }
  return dist;
}

// Krum score of `i` within `members` using its `k` nearest other members.
double ScoreWithin(const std::vector<std::vector<double>>& dist,
                   std::span<const std::size_t> members, std::size_t i,
                   std::size_t k) {
  std::vector<double> d;
  d.reserve(members.size());
  for (std::size_t j : members) {
    if (j != i) d.push_back(dist[i][j]);
  }
  k = std::min(k, d.size());
  std::partial_sort(d.begin(), d.begin() + k, d.end());
  double s = 0.0;
  for (std::size_t t = 0; t < k; ++t) s += d[t];
  return s;
}

}  // namespace

AggregationRule ParseAggregationRule(std::string_view name) {
  if (name == "mean") return AggregationRule::kMean;
  if (name == "trimmed_mean") return AggregationRule::kTrimmedMean;
  if (name == "bulyan") return AggregationRule::kBulyan;
  throw std::invalid_argument("unknown aggregation rule: " + std::string(name));
}

std::string_view AggregationRuleName(AggregationRule rule) {
  switch (rule) {
    case AggregationRule::kMean:
      return "mean";
    case AggregationRule::kTrimmedMean:
      return "trimmed_mean";
    case AggregationRule::kBulyan:
      return "bulyan";
  }
  return "mean";
}

Vec Mean(std::span<const Vec> vectors) {
  const std::size_t dim = CheckShapes(vectors);
  Vec out(dim, 0.0);
  for (const Vec& v : vectors) nn::Axpy(1.0, v, out);
  const double inv = 1.0 / static_cast<double>(vectors.size());
  for (double& x : out) x *= inv;
  return out;
}

Vec TrimmedMean(std::span<const Vec> vectors, std::size_t beta) {
  const std::size_t dim = CheckShapes(vectors);
  const std::size_t n = vectors.size();
  if (n <= 2 * beta) {
    throw InfeasibleAggregation("trimmed mean needs n > 2*beta (n=" +
                                std::to_string(n) +
                                ", beta=" + std::to_string(beta) + ")");
  }
  Vec out(dim);
  std::vector<double> col(n);
  const double inv = 1.0 / static_cast<double>(n - 2 * beta);
  for (std::size_t c = 0; c < dim; ++c) {
    for (std::size_t i = 0; i < n; ++i) col[i] = vectors[i][c];
    std::sort(col.begin(), col.end());
    double s = 0.0;
    for (std::size_t i = beta; i < n - beta; ++i) s += col[i];
    out[c] = s * inv;
  }
  return out;
}

Vec KrumScores(std::span<const Vec> vectors, std::size_t f) {
  CheckShapes(vectors);
  const std::size_t n = vectors.size();
  if (n < f + 3) {
    throw InfeasibleAggregation("Krum needs n >= f + 3 (n=" +
                                std::to_string(n) + ", f=" +
                                std::to_string(f) + ")");
  }
  const auto dist = PairwiseSquaredDistances(vectors);
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  Vec scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = ScoreWithin(dist, all, i, n - f - 2);
  }
  return scores;
}

std::vector<std::size_t> BulyanSelection(std::span<const Vec> vectors,
                                         std::size_t f) {
  CheckShapes(vectors);
  const std::size_t n = vectors.size();
  if (n < 4 * f + 3) {
    throw InfeasibleAggregation("Bulyan needs n >= 4f + 3 (n=" +
                                std::to_string(n) + ", f=" +
                                std::to_string(f) + ", bound " +
                                std::to_string(4 * f + 3) + ")");
  }
  const auto dist = PairwiseSquaredDistances(vectors);
  std::vector<std::size_t> remaining(n);
  std::iota(remaining.begin(), remaining.end(), 0);
  std::vector<std::size_t> selected;
  const std::size_t target = n - 2 * f;
  while (selected.size() < target) {
    const std::size_t m = remaining.size();
    // Late in the selection fewer than f + 3 vectors remain; score against
    // at least the nearest neighbour.
    const std::size_t k = m >= f + 3 ? m - f - 2 : 1;
    std::size_t best = 0;
    double best_score = std::numeric_limits<double>::infinity();
    for (std::size_t pos = 0; pos < m; ++pos) {
      const double s = ScoreWithin(dist, remaining, remaining[pos], k);
      // Equal scores go to the lexicographically smaller vector, so the
      // choice does not depend on participant order.
      if (s < best_score ||
          (s == best_score && vectors[remaining[pos]] < vectors[remaining[best]])) {
        best_score = s;
        best = pos;
      }
    }
    selected.push_back(remaining[best]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best));
  }
  return selected;
}

Vec Bulyan(std::span<const Vec> vectors, std::size_t f) {
  const std::size_t dim = CheckShapes(vectors);
  const std::vector<std::size_t> selected = BulyanSelection(vectors, f);
  const std::size_t theta = selected.size();
  const std::size_t keep = theta - 2 * f;
  Vec out(dim);
  std::vector<double> col(theta);
  for (std::size_t c = 0; c < dim; ++c) {
    for (std::size_t i = 0; i < theta; ++i) col[i] = vectors[selected[i]][c];
    std::sort(col.begin(), col.end());
    const double median = theta % 2 == 1
                              ? col[theta / 2]
                              : 0.5 * (col[theta / 2 - 1] + col[theta / 2]);
    // Closest to the median; equal distances go to the smaller value.
    std::stable_sort(col.begin(), col.end(), [&](double a, double b) {
      return std::abs(a - median) < std::abs(b - median);
    });
    std::sort(col.begin(), col.begin() + static_cast<std::ptrdiff_t>(keep));
    double s = 0.0;
    for (std::size_t i = 0; i < keep; ++i) s += col[i];
    out[c] = s / static_cast<double>(keep);
  }
  return out;
}

model::GradientUpdate AggregateUpdates(
    std::span<const model::GradientUpdate> updates, AggregationRule rule,
    std::size_t byzantine, const model::GlobalParams& like) {
  if (updates.empty()) {
    throw std::invalid_argument("AggregateUpdates: no updates");
  }
  std::set<model::ItemId> rows;
  for (const auto& u : updates) {
    u.Validate(like);
    for (const auto& [item, row] : u.item_rows) rows.insert(item);
  }
  const std::size_t d = like.dim();
  const std::size_t dense_tail = like.FlatSize() - like.FfnOffset();
  std::vector<Vec> flat;
  flat.reserve(updates.size());
  for (const auto& u : updates) {
    Vec v;
    v.reserve(rows.size() * d + dense_tail);
    for (model::ItemId item : rows) {
      auto it = u.item_rows.find(item);
      if (it == u.item_rows.end()) {
        v.insert(v.end(), d, 0.0);
      } else {
        v.insert(v.end(), it->second.begin(), it->second.end());
      }
    }
    nn::AppendFlat(u.ffn, v);
    v.insert(v.end(), u.projection.begin(), u.projection.end());
    flat.push_back(std::move(v));
  }
  Vec agg;
  switch (rule) {
    case AggregationRule::kMean:
      agg = Mean(flat);
      break;
    case AggregationRule::kTrimmedMean:
      agg = TrimmedMean(flat, byzantine);
      break;
    case AggregationRule::kBulyan:
      agg = Bulyan(flat, byzantine);
      break;
  }
  model::GradientUpdate out = model::GradientUpdate::ZerosLike(like);
  std::size_t off = 0;
  for (model::ItemId item : rows) {
    out.item_rows.emplace(item, Vec(agg.begin() + off, agg.begin() + off + d));
    off += d;
  }
  off = nn::AssignFlat(agg, off, out.ffn);
  std::copy_n(agg.begin() + off, out.projection.size(), out.projection.begin());
  return out;
}

}  // namespace fedpoison::defense
