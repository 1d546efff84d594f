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
#include <cmath>
#include <set>
#include <stdexcept>

#include "fmt/format.h"
#include "spdlog/spdlog.h"

namespace fedpoison::eval {
namespace {

bool Contains(std::span<const ItemId> items, ItemId item) {
  return std::find(items.begin(), items.end(), item) != items.end();
}

}  // namespace

RankingMetrics EvaluateRanking(const model::GlobalParams& params,
                               std::span<const Vec> user_embeddings,
                               const data::InteractionDataset& dataset,
                               std::span<const UserId> users, std::size_t er_k,
                               std::size_t hr_k, ItemId target) {
  if (er_k == 0 || hr_k == 0) throw std::invalid_argument("K must be >= 1");
  const model::ItemScorer scorer(params);
  std::size_t evaluated = 0;
  std::size_t exposed = 0;
  std::size_t hits = 0;
  for (UserId u : users) {
    const data::UserData* ud = dataset.Find(u);
    if (ud == nullptr || u >= user_embeddings.size()) {
      spdlog::debug("user {} has no holdout; skipped", u);
      continue;
    }
    ++evaluated;
    const Vec logits = scorer.Logits(user_embeddings[u]);
    const auto top = model::RecommendTopK(logits, std::max(er_k, hr_k),
                                          ud->positives);
    const std::span<const ItemId> all(top);
    if (Contains(all.first(std::min(er_k, all.size())), target)) ++exposed;
    if (Contains(all.first(std::min(hr_k, all.size())), ud->holdout)) ++hits;
  }
  if (evaluated == 0) return {};
  const double n = static_cast<double>(evaluated);
  return {static_cast<double>(exposed) / n, static_cast<double>(hits) / n};
}

double ExposureRate(const model::GlobalParams& params,
                    std::span<const Vec> user_embeddings,
                    const data::InteractionDataset& dataset,
                    std::span<const UserId> users, std::size_t k, ItemId target) {
  return EvaluateRanking(params, user_embeddings, dataset, users, k, k, target)
      .exposure_rate;
}

double HitRatio(const model::GlobalParams& params,
                std::span<const Vec> user_embeddings,
                const data::InteractionDataset& dataset,
                std::span<const UserId> users, std::size_t k) {
  return EvaluateRanking(params, user_embeddings, dataset, users, k, k, 0)
      .hit_ratio;
}

double MacroF1(std::span<const int> predicted, std::span<const int> truth,
               int num_classes) {
  if (predicted.size() != truth.size() || num_classes <= 0) {
    throw std::invalid_argument("MacroF1: size mismatch");
  }
  double sum = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const bool p = predicted[i] == c;
      const bool t = truth[i] == c;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    if (tp + fn == 0) {
      spdlog::debug("class {} absent from the evaluation split", c);
    }
    const double denom = static_cast<double>(2 * tp + fp + fn);
    sum += denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
  }
  return sum / num_classes;
}

double ClassifierF1(const attack::PopularityEstimator& estimator,
                    const nn::Tensor2D& embeddings,
                    const data::PopularityLabels& labels,
                    std::span<const ItemId> items) {
  std::vector<int> pred;
  std::vector<int> truth;
  for (ItemId i : items) {
    pred.push_back(estimator.Predict(embeddings.row(i)));
    truth.push_back(labels.classes.at(i));
  }
  return MacroF1(pred, truth, labels.num_classes);
}

double HistogramKl(std::span<const double> p_values,
                   std::span<const double> q_values, std::size_t bins) {
  if (p_values.empty() || q_values.empty()) {
    throw std::invalid_argument("HistogramKl: both sides must be non-empty");
  }
  if (bins == 0) throw std::invalid_argument("HistogramKl: bins must be >= 1");
  const auto [pmin, pmax] = std::minmax_element(p_values.begin(), p_values.end());
  const auto [qmin, qmax] = std::minmax_element(q_values.begin(), q_values.end());
  const double lo = std::min(*pmin, *qmin);
  const double hi = std::max(*pmax, *qmax);
  if (!(hi > lo)) return 0.0;
  const auto histogram = [&](std::span<const double> values) {
    std::vector<double> h(bins, 1.0);
    const double width = (hi - lo) / static_cast<double>(bins);
    for (double v : values) {
      auto b = static_cast<std::size_t>((v - lo) / width);
      h[std::min(b, bins - 1)] += 1.0;
    }
    const double total = static_cast<double>(values.size() + bins);
    for (double& x : h) x /= total;
    return h;
  };
  const auto p = histogram(p_values);
  const auto q = histogram(q_values);
  double kl = 0.0;
  for (std::size_t b = 0; b < bins; ++b) kl += p[b] * std::log(p[b] / q[b]);
  return std::max(kl, 0.0);
}

double GradKlDivergence(std::span<const model::GradientUpdate> benign,
                        std::span<const model::GradientUpdate> malicious,
                        std::size_t bins) {
  if (benign.empty() || malicious.empty()) {
    throw std::invalid_argument("GradKlDivergence: both sides must be non-empty");
  }
  std::set<ItemId> rows;
  for (const auto& u : benign) {
    for (const auto& [item, row] : u.item_rows) rows.insert(item);
  }
  for (const auto& u : malicious) {
    for (const auto& [item, row] : u.item_rows) rows.insert(item);
  }
  std::size_t d = 0;
  for (const auto* side : {&benign, &malicious}) {
    for (const auto& u : *side) {
      if (!u.item_rows.empty()) d = u.item_rows.begin()->second.size();
    }
  }
  const auto averaged = [&](std::span<const model::GradientUpdate> side) {
    model::GradientUpdate mean = side.front();
    mean.Scale(0.0);
    for (const auto& u : side) {
      mean.AddScaled(u, 1.0 / static_cast<double>(side.size()));
    }
    Vec flat;
    for (ItemId item : rows) {
      auto it = mean.item_rows.find(item);
      if (it == mean.item_rows.end()) {
        flat.insert(flat.end(), d, 0.0);
      } else {
        flat.insert(flat.end(), it->second.begin(), it->second.end());
      }
    }
    nn::AppendFlat(mean.ffn, flat);
    flat.insert(flat.end(), mean.projection.begin(), mean.projection.end());
    return flat;
  };
  const Vec b = averaged(benign);
  const Vec m = averaged(malicious);
  return HistogramKl(b, m, bins);
}

void WriteMetricsHeader(std::ostream& out) {
  out << "epoch,er_at_k,hr_at_k,kl,f1,aggregate_norm\n";
}

void WriteMetricRow(std::ostream& out, const MetricRow& row) {
  out << row.epoch << ',' << fmt::format("{:.6f}", row.er) << ','
      << fmt::format("{:.6f}", row.hr) << ',';
  if (row.kl) out << fmt::format("{:.6f}", *row.kl);
  out << ',';
  if (row.f1) out << fmt::format("{:.6f}", *row.f1);
  out << ',' << fmt::format("{:.6g}", row.aggregate_norm) << '\n';
}

void ExportEmbeddingsCsv(std::ostream& out, const model::GlobalParams& params,
                         const data::PopularityLabels& labels, ItemId target) {
  out << "item_id,popularity_class,is_target";
  for (std::size_t k = 0; k < params.dim(); ++k) out << ",e" << k;
  out << '\n';
  for (std::size_t i = 0; i < params.num_items(); ++i) {
    out << i << ',' << labels.classes.at(i) << ',' << (i == target ? 1 : 0);
    for (double v : params.item_embeddings.row(i)) {
      out << ',' << fmt::format("{:.17g}", v);
    }
    out << '\n';
  }
}

}  // namespace fedpoison::eval
