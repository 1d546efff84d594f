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

#include "fedpoison/data.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <utility>

#include "fedpoison/rng.h"
#include "spdlog/spdlog.h"

namespace fedpoison::data {
namespace {

std::vector<std::string_view> Split(std::string_view line,
                                    std::string_view sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = line.find(sep, pos);
    if (next == std::string_view::npos) {
      out.push_back(line.substr(pos));
      return out;
    }
    out.push_back(line.substr(pos, next - pos));
    pos = next + sep.size();
  }
}

std::string_view Trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
bool ParseNumber(std::string_view s, T& out) {
  s = Trim(s);
  if (s.empty()) return false;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::uint32_t Intern(std::string_view key,
                     std::unordered_map<std::string, std::uint32_t>& index,
                     std::vector<std::string>& keys) {
  auto [it, inserted] =
      index.try_emplace(std::string(key), static_cast<std::uint32_t>(keys.size()));
  if (inserted) keys.emplace_back(key);
  return it->second;
}

}  // namespace

RatingTable LoadRatings(std::istream& in, std::string_view separator) {
  if (separator.empty()) {
    throw std::invalid_argument("LoadRatings: empty separator");
  }
  RatingTable table;
  std::unordered_map<std::string, std::uint32_t> user_index;
  std::unordered_map<std::string, std::uint32_t> item_index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = Trim(line);
    if (view.empty()) continue;
    const auto fields = Split(view, separator);
    const auto fail = [&](const std::string& what) {
      throw std::runtime_error("ratings line " + std::to_string(line_no) +
                               ": " + what);
    };
    if (fields.size() < 3 || fields.size() > 4) {
      fail("expected 3 or 4 fields, got " + std::to_string(fields.size()));
    }
    // Ids are opaque tokens but must be integers, as in MovieLens and TSV dumps.
    std::int64_t raw_user = 0;
    std::int64_t raw_item = 0;
    if (!ParseNumber(fields[0], raw_user)) fail("non-numeric user id");
    if (!ParseNumber(fields[1], raw_item)) fail("non-numeric item id");
    RatingRecord rec;
    if (!ParseNumber(fields[2], rec.rating)) fail("non-numeric rating");
    if (fields.size() == 4) {
      std::int64_t ts = 0;
      if (!ParseNumber(fields[3], ts)) fail("non-numeric timestamp");
      rec.timestamp = ts;
    }
    rec.user = Intern(Trim(fields[0]), user_index, table.user_keys);
    rec.item = Intern(Trim(fields[1]), item_index, table.item_keys);
    table.records.push_back(rec);
  }
  if (table.records.empty()) {
    throw std::runtime_error("LoadRatings: no ratings in input");
  }
  return table;
}

RatingTable LoadRatingsFile(const std::string& path,
                            std::string_view separator) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open ratings file: " + path);
  return LoadRatings(in, separator);
}

const UserData* InteractionDataset::Find(UserId user) const {
  auto it = std::lower_bound(
      users.begin(), users.end(), user,
      [](const UserData& u, UserId id) { return u.user < id; });
  if (it == users.end() || it->user != user) return nullptr;
  return &*it;
}

nlohmann::json InteractionDataset::ToJson() const {
  nlohmann::json j;
  j["format"] = "fedpoison.dataset";
  j["version"] = 1;
  j["num_users"] = num_users;
  j["num_items"] = num_items;
  j["q"] = q;
  j["excluded_users"] = excluded_users;
  auto& arr = j["users"] = nlohmann::json::array();
  for (const auto& u : users) {
    arr.push_back({{"user", u.user},
                   {"positives", u.positives},
                   {"negatives", u.negatives},
                   {"holdout", u.holdout}});
  }
  return j;
}

InteractionDataset InteractionDataset::FromJson(const nlohmann::json& j) {
  if (j.value("format", "") != "fedpoison.dataset" ||
      j.value("version", 0) != 1) {
    throw std::runtime_error("unsupported dataset snapshot");
  }
  InteractionDataset d;
  d.num_users = j.at("num_users").get<std::size_t>();
  d.num_items = j.at("num_items").get<std::size_t>();
  d.q = j.at("q").get<int>();
  d.excluded_users = j.at("excluded_users").get<std::vector<UserId>>();
  for (const auto& u : j.at("users")) {
    UserData ud;
    ud.user = u.at("user").get<UserId>();
    ud.positives = u.at("positives").get<std::vector<ItemId>>();
    ud.negatives = u.at("negatives").get<std::vector<ItemId>>();
    ud.holdout = u.at("holdout").get<ItemId>();
    d.users.push_back(std::move(ud));
  }
  return d;
}

bool SampleNegatives(UserData& user, std::size_t num_items, int q,
                     std::mt19937_64& rng) {
  std::vector<bool> taken(num_items, false);
  for (ItemId i : user.positives) taken[i] = true;
  taken[user.holdout] = true;
  std::vector<ItemId> candidates;
  for (std::size_t i = 0; i < num_items; ++i) {
    if (!taken[i]) candidates.push_back(static_cast<ItemId>(i));
  }
  const std::size_t need = static_cast<std::size_t>(q) * user.positives.size();
  user.negatives.clear();
  if (candidates.empty() || need == 0) return need == 0;
  if (need <= candidates.size()) {
    std::sample(candidates.begin(), candidates.end(),
                std::back_inserter(user.negatives), need, rng);
    return true;
  }
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  user.negatives.reserve(need);
  for (std::size_t k = 0; k < need; ++k) {
    user.negatives.push_back(candidates[pick(rng)]);
  }
  return false;
}

InteractionDataset BuildDataset(const RatingTable& table, int q,
                                std::uint64_t seed) {
  if (q < 1) throw std::invalid_argument("BuildDataset: q must be >= 1");
  InteractionDataset ds;
  ds.num_users = table.num_users();
  ds.num_items = table.num_items();
  ds.q = q;

  // Per user: item -> (timestamp or -inf, file position) of its latest record.
  struct Seen {
    std::int64_t ts;
    std::size_t pos;
  };
  std::vector<std::map<ItemId, Seen>> per_user(ds.num_users);
  for (std::size_t pos = 0; pos < table.records.size(); ++pos) {
    const RatingRecord& r = table.records[pos];
    if (r.user >= ds.num_users || r.item >= ds.num_items) {
      throw std::invalid_argument("BuildDataset: record id out of range");
    }
    const Seen s{r.timestamp.value_or(INT64_MIN), pos};
    auto [it, inserted] = per_user[r.user].try_emplace(r.item, s);
    if (!inserted && (s.ts > it->second.ts ||
                      (s.ts == it->second.ts && s.pos > it->second.pos))) {
      it->second = s;
    }
  }

  std::size_t with_replacement = 0;
  for (UserId u = 0; u < ds.num_users; ++u) {
    const auto& items = per_user[u];
    if (items.size() < 2) {
      spdlog::warn("user {} has {} positive(s); excluded from the dataset",
                   table.user_keys[u], items.size());
      ds.excluded_users.push_back(u);
      continue;
    }
    UserData ud;
    ud.user = u;
    auto latest = items.begin();
    for (auto it = items.begin(); it != items.end(); ++it) {
      const Seen& a = it->second;
      const Seen& b = latest->second;
      if (a.ts > b.ts || (a.ts == b.ts && a.pos > b.pos)) latest = it;
    }
    ud.holdout = latest->first;
    for (const auto& [item, seen] : items) {
      if (item != ud.holdout) ud.positives.push_back(item);
    }
    auto rng = MakeRng(seed, {u});
    if (!SampleNegatives(ud, ds.num_items, q, rng)) {
      spdlog::debug("user {}: negatives sampled with replacement",
                    table.user_keys[u]);
      ++with_replacement;
    }
    ds.users.push_back(std::move(ud));
  }
  if (with_replacement > 0) {
    spdlog::warn(
        "{} user(s) have fewer candidate negatives than q x positives; "
        "their negatives were sampled with replacement",
        with_replacement);
  }
  return ds;
}

std::size_t PopularityLabels::CountInClass(int c) const {
  return static_cast<std::size_t>(std::count(classes.begin(), classes.end(), c));
}

PopularityLabels AssignPopularityLabels(const RatingTable& table,
                                        std::vector<double> cutoffs) {
  if (table.records.empty() || table.num_items() == 0) {
    throw std::invalid_argument("AssignPopularityLabels: empty records");
  }
  if (cutoffs.empty()) {
    throw std::invalid_argument("AssignPopularityLabels: no cutoffs");
  }
  for (std::size_t k = 0; k < cutoffs.size(); ++k) {
    if (!(cutoffs[k] > 0.0 && cutoffs[k] < 1.0) ||
        (k > 0 && !(cutoffs[k] > cutoffs[k - 1]))) {
      throw std::invalid_argument(
          "AssignPopularityLabels: cutoffs must be strictly increasing in (0,1)");
    }
  }
  const std::size_t n = table.num_items();
  PopularityLabels labels;
  labels.num_classes = static_cast<int>(cutoffs.size()) + 1;
  labels.counts.assign(n, 0);
  {
    std::vector<std::vector<UserId>> users_of(n);
    for (const auto& r : table.records) users_of[r.item].push_back(r.user);
    for (std::size_t i = 0; i < n; ++i) {
      auto& v = users_of[i];
      std::sort(v.begin(), v.end());
      labels.counts[i] = static_cast<std::size_t>(
          std::unique(v.begin(), v.end()) - v.begin());
    }
  }
  std::vector<ItemId> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](ItemId a, ItemId b) {
    return labels.counts[a] > labels.counts[b];
  });
  labels.classes.assign(n, 0);
  std::size_t start = 0;
  for (std::size_t k = 0; k < cutoffs.size(); ++k) {
    // Guard against 0.45 * 20 landing a hair above 9.
    const auto end = std::min(
        n, static_cast<std::size_t>(
               std::ceil(cutoffs[k] * static_cast<double>(n) - 1e-9)));
    const int cls = labels.num_classes - 1 - static_cast<int>(k);
    for (std::size_t r = start; r < end; ++r) labels.classes[order[r]] = cls;
    start = std::max(start, end);
  }
  return labels;
}

ItemId SelectTargetItem(const PopularityLabels& labels) {
  if (labels.counts.empty()) {
    throw std::invalid_argument("SelectTargetItem: no items");
  }
  const auto it = std::min_element(labels.counts.begin(), labels.counts.end());
  return static_cast<ItemId>(it - labels.counts.begin());
}

}  // namespace fedpoison::data
