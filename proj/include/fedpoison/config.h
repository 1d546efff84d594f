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

#ifndef FEDPOISON_CONFIG_H_
#define FEDPOISON_CONFIG_H_

#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedpoison/attack.h"
#include "fedpoison/estimator.h"
#include "fedpoison/federation.h"
#include "fedpoison/model.h"
#include "fedpoison/synthetic.h"

namespace fedpoison::config {

// Malformed file, unknown key or invalid value.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  // [data]; an empty path selects the synthetic generator.
  std::string data_path;
  std::string separator = "::";
  int q = 4;
  std::vector<double> popularity_cutoffs = {0.10, 0.45};
  // [synthetic]; its seed is taken from [seeds] data.
  data::SyntheticConfig synthetic;
  // [model]
  model::ModelConfig model;
  // [federation] and [defense]
  int rounds = 200;
  int attack_start_epoch = 151;
  federation::FederationConfig federation;
  // [attack]
  attack::AttackMode mode = attack::AttackMode::kNone;
  double malicious_fraction = 0.1;
  std::optional<double> alpha;  // unset: 60 below 15% malicious, else 20
  double gamma = 0.0005;
  int craft_epochs = 30;
  double craft_lr = 0.01;
  double p_norm = 2.0;
  std::optional<data::ItemId> target;  // unset: least popular item
  std::optional<std::size_t> fillers;  // unset: mean profile length
  attack::EstimatorConfig estimator;
  // [seeds]
  std::uint64_t data_seed = 1;
  std::uint64_t model_seed = 2;
  // [output]
  std::string output_dir = "out";
  int checkpoint_every = 0;
  std::vector<int> export_embeddings_at;
  int f1_probe_every = 0;

  double ResolvedAlpha() const;
  // Throws ConfigError.
  void Validate() const;
};

// Parses INI text, then applies "section.key=value" overrides in order.
ExperimentConfig ParseConfig(std::istream& in,
                             std::span<const std::string> overrides = {});
ExperimentConfig LoadConfig(const std::string& path,
                            std::span<const std::string> overrides = {});
void ApplyOverride(ExperimentConfig& config, const std::string& assignment);

// Every recognised key with its effective value, as INI text that parses back
// to an equal configuration.
std::string ToIni(const ExperimentConfig& config);

// "section.key" names accepted by ParseConfig.
std::vector<std::string> KnownKeys();

}  // namespace fedpoison::config

#endif  // FEDPOISON_CONFIG_H_
