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

#ifndef FEDPOISON_SYNTHETIC_H_
#define FEDPOISON_SYNTHETIC_H_

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string_view>
#include <vector>

#include "fedpoison/data.h"

namespace fedpoison::data {

struct SyntheticConfig {
  std::size_t users = 600;
  std::size_t items = 400;
  std::size_t interactions = 15000;
  // Zipf exponent of item popularity; 0 gives uniform item weights.
  double skew = 1.0;
  std::size_t clusters = 8;
  // Weight multiplier for items in the user's own preference cluster.
  double cluster_affinity = 4.0;
  std::uint64_t seed = 1;

  void Validate() const;
};

// Power-law item popularity mixed with user preference clusters. Every user
// gets distinct items; timestamps increase in interaction order. Ids in the
// returned table are the dense indices, keys are 1-based.
RatingTable GenerateSynthetic(const SyntheticConfig& config);

// Writes "user<sep>item<sep>rating<sep>timestamp" rows using the table keys.
void WriteRatings(std::ostream& out, const RatingTable& table,
                  std::string_view separator = "::");

}  // namespace fedpoison::data

#endif  // FEDPOISON_SYNTHETIC_H_
