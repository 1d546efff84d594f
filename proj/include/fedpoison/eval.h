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

#ifndef FEDPOISON_EVAL_H_
#define FEDPOISON_EVAL_H_

#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "fedpoison/data.h"
#include "fedpoison/estimator.h"
#include "fedpoison/model.h"

namespace fedpoison::eval {

using data::ItemId;
using data::UserId;
using nn::Vec;

struct RankingMetrics {
  double exposure_rate = 0.0;
  double hit_ratio = 0.0;
};

// Ranks, for each listed user, every item outside its training positives and
// reports ER@er_k for `target` and HR@hr_k for the user's holdout. Users
// missing from `dataset` are skipped.
RankingMetrics EvaluateRanking(const model::GlobalParams& params,
                               std::span<const Vec> user_embeddings,
                               const data::InteractionDataset& dataset,
                               std::span<const UserId> users, std::size_t er_k,
                               std::size_t hr_k, ItemId target);

double ExposureRate(const model::GlobalParams& params,
                    std::span<const Vec> user_embeddings,
                    const data::InteractionDataset& dataset,
                    std::span<const UserId> users, std::size_t k, ItemId target);

double HitRatio(const model::GlobalParams& params,
                std::span<const Vec> user_embeddings,
                const data::InteractionDataset& dataset,
                std::span<const UserId> users, std::size_t k);

// Macro-averaged F1; a class with no true and no predicted members scores 0.
double MacroF1(std::span<const int> predicted, std::span<const int> truth,
               int num_classes);

double ClassifierF1(const attack::PopularityEstimator& estimator,
                    const nn::Tensor2D& embeddings,
                    const data::PopularityLabels& labels,
                    std::span<const ItemId> items);

// KL(P || Q) between histograms of the two value sets over their common
// [min, max] range with add-one smoothing. Returns 0 for a degenerate range.
double HistogramKl(std::span<const double> p_values,
                   std::span<const double> q_values, std::size_t bins);

// Averages each side's updates, densifies both over the union of their item
// rows and returns HistogramKl(benign, malicious).
double GradKlDivergence(std::span<const model::GradientUpdate> benign,
                        std::span<const model::GradientUpdate> malicious,
                        std::size_t bins);

struct MetricRow {
  int epoch = 0;
  double er = 0.0;
  double hr = 0.0;
  std::optional<double> kl;
  std::optional<double> f1;
  double aggregate_norm = 0.0;
};

void WriteMetricsHeader(std::ostream& out);
void WriteMetricRow(std::ostream& out, const MetricRow& row);

// item_id, popularity_class, is_target, e0..e{d-1}
void ExportEmbeddingsCsv(std::ostream& out, const model::GlobalParams& params,
                         const data::PopularityLabels& labels, ItemId target);

}  // namespace fedpoison::eval

#endif  // FEDPOISON_EVAL_H_
