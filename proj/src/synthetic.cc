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

#include "fedpoison/synthetic.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace fedpoison::data {

void SyntheticConfig::Validate() const {
  if (users == 0 || items == 0 || interactions == 0) {
    throw std::invalid_argument("synthetic: users, items and interactions must be positive");
  }
  if (interactions > users * items) {
    throw std::invalid_argument("synthetic: interactions exceed users x items");
  }
  if (!(skew >= 0.0)) throw std::invalid_argument("synthetic: skew must be >= 0");
  if (clusters == 0) throw std::invalid_argument("synthetic: clusters must be >= 1");
  if (!(cluster_affinity > 0.0)) {
    throw std::invalid_argument("synthetic: cluster_affinity must be > 0");
  }
}

RatingTable GenerateSynthetic(const SyntheticConfig& config) {
  config.Validate();
  std::mt19937_64 rng(config.seed);
  const std::size_t n_users = config.users;
  const std::size_t n_items = config.items;

  std::vector<std::size_t> rank(n_items);
  std::iota(rank.begin(), rank.end(), 0);
  std::shuffle(rank.begin(), rank.end(), rng);
  std::vector<double> weight(n_items);
  for (std::size_t j = 0; j < n_items; ++j) {
    weight[j] = std::pow(static_cast<double>(rank[j] + 1), -config.skew);
  }
  // Balanced cluster assignment keeps skew = 0 near-uniform.
  std::vector<std::size_t> item_cluster(n_items);
  {
    std::vector<std::size_t> order(n_items);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t k = 0; k < n_items; ++k) {
      item_cluster[order[k]] = k % config.clusters;
    }
  }

  // Per-user interaction counts: lognormal activity, exact total.
  const std::size_t floor_count =
      std::min<std::size_t>(3, std::max<std::size_t>(1, config.interactions / n_users));
  std::lognormal_distribution<double> activity(0.0, 0.5);
  std::vector<double> act(n_users);
  for (double& a : act) a = activity(rng);
  const double act_sum = std::accumulate(act.begin(), act.end(), 0.0);
  std::vector<std::size_t> count(n_users);
  std::size_t total = 0;
  for (std::size_t u = 0; u < n_users; ++u) {
    const auto c = static_cast<std::size_t>(
        static_cast<double>(config.interactions) * act[u] / act_sum);
    count[u] = std::clamp(c, floor_count, n_items);
    total += count[u];
  }
  std::uniform_int_distribution<std::size_t> pick_user(0, n_users - 1);
  while (total < config.interactions) {
    const std::size_t u = pick_user(rng);
    if (count[u] < n_items) {
      ++count[u];
      ++total;
    }
  }
  while (total > config.interactions) {
    const std::size_t u = pick_user(rng);
    if (count[u] > floor_count) {
      --count[u];
      --total;
    }
  }

  RatingTable table;
  for (std::size_t u = 0; u < n_users; ++u) table.user_keys.push_back(std::to_string(u + 1));
  for (std::size_t j = 0; j < n_items; ++j) table.item_keys.push_back(std::to_string(j + 1));

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> stars(1, 5);
  std::int64_t clock = 978300000;
  std::vector<std::pair<double, ItemId>> keys(n_items);
  for (std::size_t u = 0; u < n_users; ++u) {
    const std::size_t cluster = u % config.clusters;
    // Weighted sampling without replacement via exponential keys.
    for (std::size_t j = 0; j < n_items; ++j) {
      const double w = weight[j] * (item_cluster[j] == cluster ? config.cluster_affinity : 1.0);
      double r = unit(rng);
      while (r <= 0.0) r = unit(rng);
      keys[j] = {std::log(r) / w, static_cast<ItemId>(j)};
    }
    std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(count[u]),
                      keys.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<ItemId> chosen;
    for (std::size_t k = 0; k < count[u]; ++k) chosen.push_back(keys[k].second);
    std::shuffle(chosen.begin(), chosen.end(), rng);
    for (ItemId item : chosen) {
      table.records.push_back({static_cast<UserId>(u), item,
                               static_cast<double>(stars(rng)), clock});
      clock += 1 + static_cast<std::int64_t>(unit(rng) * 60.0);
    }
  }
  return table;
}

void WriteRatings(std::ostream& out, const RatingTable& table,
                  std::string_view separator) {
  for (const RatingRecord& r : table.records) {
    out << table.user_keys.at(r.user) << separator << table.item_keys.at(r.item)
        << separator << r.rating;
    if (r.timestamp) out << separator << *r.timestamp;
    out << '\n';
  }
}

}  // namespace fedpoison::data
