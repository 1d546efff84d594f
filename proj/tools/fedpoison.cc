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

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "fedpoison/config.h"
#include "fedpoison/eval.h"
#include "fedpoison/experiment.h"
#include "fedpoison/synthetic.h"
#include "fmt/format.h"
#include "json.hpp"
#include "spdlog/spdlog.h"

namespace {

using fedpoison::config::ConfigError;
using fedpoison::config::ExperimentConfig;

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr const char* kThreadsVariable = "FEDPOISON_THREADS";

// Worker threads per round: the environment override, else the hardware.
std::size_t ThreadCount() {
  if (const char* value = std::getenv(kThreadsVariable)) {
    try {
      const long n = std::stol(value);
      if (n >= 1) return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string(kThreadsVariable) + " must be a positive integer");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

nlohmann::json ReadJsonFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return nlohmann::json::parse(in);
}

// Rebuilds the simulation a run checkpoint was written from.
struct Restored {
  fedpoison::experiment::PreparedData prepared;
  std::unique_ptr<fedpoison::federation::Simulation> sim;
};

Restored Restore(const ExperimentConfig& config, const std::string& checkpoint) {
  Restored r;
  r.prepared = fedpoison::experiment::PrepareData(config);
  r.sim = std::make_unique<fedpoison::federation::Simulation>(
      fedpoison::experiment::MakeSimulation(config, r.prepared));
  const nlohmann::json j = ReadJsonFile(checkpoint);
  r.sim->Restore(j.contains("simulation") ? j.at("simulation") : j);
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated recommender poisoning simulator"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  std::string config_path;
  std::vector<std::string> overrides;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "INI experiment file")->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "section.key=value override (repeatable)");
  };

  CLI::App* run = app.add_subcommand("run", "Run an experiment");
  add_config(run);
  std::string resume;
  run->add_option("--resume", resume, "Continue from a run checkpoint")->check(CLI::ExistingFile);

  CLI::App* show = app.add_subcommand("config", "Print the resolved configuration");
  add_config(show);

  CLI::App* synth = app.add_subcommand("synth", "Write a synthetic ratings file");
  fedpoison::data::SyntheticConfig synthetic;
  std::string synth_out;
  std::string synth_sep = "::";
  synth->add_option("--users", synthetic.users, "Number of users");
  synth->add_option("--items", synthetic.items, "Number of items");
  synth->add_option("--interactions", synthetic.interactions, "Total interactions");
  synth->add_option("--skew", synthetic.skew, "Zipf exponent of item popularity");
  synth->add_option("--clusters", synthetic.clusters, "Preference clusters");
  synth->add_option("--seed", synthetic.seed, "Generator seed");
  synth->add_option("--separator", synth_sep, "Field separator");
  synth->add_option("-o,--out", synth_out, "Output path")->required();

  CLI::App* evaluate = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_config(evaluate);
  std::string eval_checkpoint;
  bool eval_f1 = false;
  evaluate->add_option("--checkpoint", eval_checkpoint, "Run checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  evaluate->add_flag("--f1", eval_f1, "Also probe the popularity classifier F1");

  CLI::App* export_cmd = app.add_subcommand("export-embeddings", "Export item embeddings as CSV");
  add_config(export_cmd);
  std::string export_checkpoint;
  std::string export_out;
  export_cmd->add_option("--checkpoint", export_checkpoint, "Run checkpoint")
      ->check(CLI::ExistingFile);
  export_cmd->add_option("-o,--out", export_out, "Output CSV")->required();

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  auto load = [&]() {
    ExperimentConfig c;
    if (config_path.empty()) {
      for (const std::string& o : overrides) fedpoison::config::ApplyOverride(c, o);
      c.Validate();
    } else {
      c = fedpoison::config::LoadConfig(config_path, overrides);
    }
    c.federation.threads = ThreadCount();
    return c;
  };

  try {
    if (*run) {
      const ExperimentConfig config = load();
      fedpoison::experiment::RunOptions options;
      if (!resume.empty()) options.resume_from = resume;
      const auto result = fedpoison::experiment::RunExperiment(config, options);
      const auto& last = result.rows.back();
      fmt::print("epoch {}: ER@{} {:.4f} HR@{} {:.4f}; outputs in {}\n", last.epoch,
                 config.federation.er_k, last.er, config.federation.hr_k, last.hr,
                 config.output_dir);
    } else if (*show) {
      fmt::print("{}", fedpoison::config::ToIni(load()));
    } else if (*synth) {
      try {
        synthetic.Validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      const auto table = fedpoison::data::GenerateSynthetic(synthetic);
      std::ofstream out(synth_out);
      if (!out) throw std::runtime_error("cannot write " + synth_out);
      fedpoison::data::WriteRatings(out, table, synth_sep);
      fmt::print("wrote {} ratings to {}\n", table.records.size(), synth_out);
    } else if (*evaluate) {
      const ExperimentConfig config = load();
      const Restored r = Restore(config, eval_checkpoint);
      const auto m = r.sim->Evaluate();
      nlohmann::json j = {{"round", r.sim->next_round() - 1},
                          {"target", r.prepared.target},
                          {"er_at_k", m.exposure_rate},
                          {"hr_at_k", m.hit_ratio}};
      if (eval_f1) {
        j["f1"] = fedpoison::experiment::ProbePopularityF1(*r.sim, config, r.prepared.target);
      }
      fmt::print("{}\n", j.dump(2));
    } else if (*export_cmd) {
      const ExperimentConfig config = load();
      std::ofstream out(export_out);
      if (!out) throw std::runtime_error("cannot write " + export_out);
      if (export_checkpoint.empty()) {
        const auto prepared = fedpoison::experiment::PrepareData(config);
        const auto sim = fedpoison::experiment::MakeSimulation(config, prepared);
        fedpoison::eval::ExportEmbeddingsCsv(out, sim.global(), sim.labels(), prepared.target);
      } else {
        const Restored r = Restore(config, export_checkpoint);
        fedpoison::eval::ExportEmbeddingsCsv(out, r.sim->global(), r.sim->labels(),
                                             r.prepared.target);
      }
    }
  } catch (const ConfigError& e) {
    spdlog::error("configuration error: {}", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
  return 0;
}
