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

#ifndef FEDPOISON_DATA_H_
#define FEDPOISON_DATA_H_

#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace fedpoison::data {

using ItemId = std::uint32_t;
using UserId = std::uint32_t;

struct RatingRecord {
  UserId user = 0;
  ItemId item = 0;
  double rating = 0.0;
  std::optional<std::int64_t> timestamp;

  friend bool operator==(const RatingRecord&, const RatingRecord&) = default;
};

// Records with dense 0-based ids plus the raw id of every dense index.
struct RatingTable {
  std::vector<RatingRecord> records;
  std::vector<std::string> user_keys;
  std::vector<std::string> item_keys;

  std::size_t num_users() const { return user_keys.size(); }
  std::size_t num_items() const { return item_keys.size(); }
};

// Parses "user<sep>item<sep>rating[<sep>timestamp]" rows. Blank lines are
// skipped. Throws std::runtime_error naming the offending line.
RatingTable LoadRatings(std::istream& in, std::string_view separator);
RatingTable LoadRatingsFile(const std::string& path, std::string_view separator);

struct UserData {
  UserId user = 0;
  std::vector<ItemId> positives;  // training positives, ascending
  std::vector<ItemId> negatives;  // sampled, q per positive
  ItemId holdout = 0;

  friend bool operator==(const UserData&, const UserData&) = default;
};

struct InteractionDataset {
  std::size_t num_users = 0;  // M, including excluded users
  std::size_t num_items = 0;  // N
  int q = 4;
  std::vector<UserData> users;          // ascending user id
  std::vector<UserId> excluded_users;   // fewer than two positives

  const UserData* Find(UserId user) const;
  nlohmann::json ToJson() const;
  static InteractionDataset FromJson(const nlohmann::json& j);

  friend bool operator==(const InteractionDataset&,
                         const InteractionDataset&) = default;
};

// Binarizes, holds out the latest positive per user (file order when there
// are no timestamps) and samples q negatives per remaining positive.
InteractionDataset BuildDataset(const RatingTable& table, int q,
                                std::uint64_t seed);

// Replaces `user.negatives` with q * |positives| fresh samples drawn from the
// items outside positives and holdout. Returns false when it had to sample
// with replacement.
bool SampleNegatives(UserData& user, std::size_t num_items, int q,
                     std::mt19937_64& rng);

enum PopularityClass : int { kLow = 0, kMedium = 1, kHigh = 2 };

struct PopularityLabels {
  std::vector<int> classes;          // per item
  std::vector<std::size_t> counts;   // distinct users per item
  int num_classes = 3;

  int top_class() const { return num_classes - 1; }
  std::size_t CountInClass(int c) const;
};

// Items sorted by descending interaction count (ties: ascending index). With
// cutoffs (c_1 < ... < c_k) the first ceil(c_1 N) items get the top class,
// the items up to ceil(c_2 N) the next one, and so on.
PopularityLabels AssignPopularityLabels(const RatingTable& table,
                                        std::vector<double> cutoffs = {0.10,
                                                                       0.45});

// Least interacted item, ties to the lowest index.
ItemId SelectTargetItem(const PopularityLabels& labels);

}  // namespace fedpoison::data

#endif  // FEDPOISON_DATA_H_
