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

#ifndef FEDPOISON_EXPERIMENT_H_
#define FEDPOISON_EXPERIMENT_H_

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedpoison/attack.h"
#include "fedpoison/config.h"
#include "fedpoison/data.h"
#include "fedpoison/eval.h"
#include "fedpoison/federation.h"
#include "json.hpp"

namespace fedpoison::experiment {

// Everything derived from the data seed: ratings, local datasets, popularity
// labels, the target item and the malicious user set.
struct PreparedData {
  data::RatingTable table;
  data::InteractionDataset dataset;
  data::PopularityLabels labels;
  data::ItemId target = 0;
  std::vector<data::UserId> malicious;
};

PreparedData PrepareData(const config::ExperimentConfig& config);

attack::AdversaryConfig MakeAdversary(const config::ExperimentConfig& config,
                                      const PreparedData& prepared);

// Simulation with the adversary installed. `prepared` must outlive it.
federation::Simulation MakeSimulation(const config::ExperimentConfig& config,
                                      const PreparedData& prepared);

// Held-out macro F1 of an estimator trained on the current item embeddings.
double ProbePopularityF1(const federation::Simulation& simulation,
                         const config::ExperimentConfig& config,
                         data::ItemId target);

// Epochs after `attack_start_epoch` (1-based) until ER first reaches
// `threshold`; nullopt if it never does.
std::optional<int> EpochsToReach(std::span<const eval::MetricRow> rows,
                                 int attack_start_epoch, double threshold);

struct RunOptions {
  std::optional<std::string> resume_from;
  bool write_outputs = true;
};

struct ExperimentResult {
  std::vector<eval::MetricRow> rows;
  data::ItemId target = 0;
};

// Runs all configured rounds. With outputs enabled, writes into
// config.output_dir: resolved_config.ini, metrics.csv, timing.csv,
// checkpoints/round_<t>.json, final_checkpoint.json and
// embeddings_epoch_<t>.csv.
ExperimentResult RunExperiment(const config::ExperimentConfig& config,
                               const RunOptions& options = {});

nlohmann::json MetricRowToJson(const eval::MetricRow& row);
eval::MetricRow MetricRowFromJson(const nlohmann::json& j);

}  // namespace fedpoison::experiment

#endif  // FEDPOISON_EXPERIMENT_H_
