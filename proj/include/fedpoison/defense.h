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

#ifndef FEDPOISON_DEFENSE_H_
#define FEDPOISON_DEFENSE_H_

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fedpoison/model.h"
#include "fedpoison/tensor.h"

namespace fedpoison::defense {

using nn::Vec;

// Raised when a robust rule cannot run with the given participant count.
class InfeasibleAggregation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class AggregationRule { kMean, kTrimmedMean, kBulyan };

AggregationRule ParseAggregationRule(std::string_view name);
std::string_view AggregationRuleName(AggregationRule rule);

Vec Mean(std::span<const Vec> vectors);

// Per coordinate: drop the beta largest and beta smallest values and average
// the rest. Requires n > 2 beta.
Vec TrimmedMean(std::span<const Vec> vectors, std::size_t beta);

// score_i = sum of squared distances to the n - f - 2 nearest other vectors.
// Requires n >= f + 3.
Vec KrumScores(std::span<const Vec> vectors, std::size_t f);

// Two stages: repeatedly move the Krum-minimal remaining vector into the
// selection (ties to the lexicographically smaller vector) until it holds
// n - 2f vectors, then per coordinate average the
// n - 4f selected values closest to their median. Requires n >= 4f + 3.
Vec Bulyan(std::span<const Vec> vectors, std::size_t f);

// Indices chosen by Bulyan's first stage, in selection order.
std::vector<std::size_t> BulyanSelection(std::span<const Vec> vectors,
                                         std::size_t f);

// Densifies the updates over the union of touched item rows (absent rows are
// zero), aggregates them with `rule` and returns the sparse result.
// `byzantine` is beta for trimmed mean and f for Bulyan; ignored for mean.
model::GradientUpdate AggregateUpdates(
    std::span<const model::GradientUpdate> updates, AggregationRule rule,
    std::size_t byzantine, const model::GlobalParams& like);

}  // namespace fedpoison::defense

#endif  // FEDPOISON_DEFENSE_H_
