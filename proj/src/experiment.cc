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

#include "fedpoison/experiment.h"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <set>

#include "fedpoison/estimator.h"
#include "fedpoison/rng.h"
#include "fedpoison/synthetic.h"
#include "fmt/format.h"
#include "spdlog/spdlog.h"

namespace fedpoison::experiment {
namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kDatasetStream = 1;
constexpr std::uint64_t kMaliciousStream = 2;

std::ofstream OpenOutput(const fs::path& path, std::ios::openmode mode = std::ios::trunc) {
  std::ofstream out(path, std::ios::out | mode);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void WriteJson(const fs::path& path, const nlohmann::json& j) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out = OpenOutput(tmp);
    out << j.dump() << "\n";
  }
  fs::rename(tmp, path);
}

// Configuration text that must match between a checkpoint and a resumed run.
std::string RunIdentity(const config::ExperimentConfig& config) {
  config::ExperimentConfig c = config;
  const config::ExperimentConfig defaults;
  c.output_dir = defaults.output_dir;
  c.checkpoint_every = defaults.checkpoint_every;
  c.export_embeddings_at = defaults.export_embeddings_at;
  c.rounds = defaults.rounds;
  return config::ToIni(c);
}

void ExportEmbeddings(const fs::path& dir, int epoch, const federation::Simulation& sim,
                      data::ItemId target) {
  std::ofstream out = OpenOutput(dir / fmt::format("embeddings_epoch_{}.csv", epoch));
  eval::ExportEmbeddingsCsv(out, sim.global(), sim.labels(), target);
}

}  // namespace

PreparedData PrepareData(const config::ExperimentConfig& config) {
  PreparedData p;
  if (config.data_path.empty()) {
    data::SyntheticConfig synthetic = config.synthetic;
    synthetic.seed = config.data_seed;
    p.table = data::GenerateSynthetic(synthetic);
  } else {
    p.table = data::LoadRatingsFile(config.data_path, config.separator);
  }
  p.dataset = data::BuildDataset(p.table, config.q, DeriveSeed(config.data_seed, {kDatasetStream}));
  p.labels = data::AssignPopularityLabels(p.table, config.popularity_cutoffs);
  if (config.target) {
    if (*config.target >= p.dataset.num_items) {
      throw config::ConfigError(fmt::format("attack.target {} is not an item index (N = {})",
                                            *config.target, p.dataset.num_items));
    }
    p.target = *config.target;
  } else {
    p.target = data::SelectTargetItem(p.labels);
  }
  std::vector<data::UserId> clients;
  clients.reserve(p.dataset.users.size());
  for (const data::UserData& u : p.dataset.users) clients.push_back(u.user);
  p.malicious = attack::ChooseMaliciousUsers(clients, config.malicious_fraction,
                                             DeriveSeed(config.data_seed, {kMaliciousStream}));
  if (config.mode != attack::AttackMode::kNone && p.malicious.empty()) {
    throw config::ConfigError("attack.malicious_fraction selects no malicious users");
  }
  return p;
}

attack::AdversaryConfig MakeAdversary(const config::ExperimentConfig& config,
                                      const PreparedData& prepared) {
  attack::AdversaryConfig a;
  a.mode = config.mode;
  a.target = prepared.target;
  a.malicious = prepared.malicious;
  a.alpha = config.ResolvedAlpha();
  a.gamma = config.gamma;
  a.craft_epochs = config.craft_epochs;
  a.craft_lr = config.craft_lr;
  a.p_norm = config.p_norm;
  a.fillers = config.fillers ? *config.fillers : attack::MeanProfileLength(prepared.dataset);
  return a;
}

federation::Simulation MakeSimulation(const config::ExperimentConfig& config,
                                      const PreparedData& prepared) {
  federation::Simulation sim(prepared.dataset, prepared.labels, config.model, config.federation,
                             config.model_seed);
  sim.SetAdversary(MakeAdversary(config, prepared), config.attack_start_epoch, config.estimator);
  return sim;
}

double ProbePopularityF1(const federation::Simulation& simulation,
                         const config::ExperimentConfig& config, data::ItemId target) {
  const attack::ItemSplit split = attack::SplitItems(
      simulation.labels(), target, config.estimator.holdout_fraction, config.estimator.seed);
  if (split.heldout.empty()) {
    throw std::invalid_argument("F1 probe needs a non-empty held-out split");
  }
  const attack::PopularityEstimator est = attack::TrainPopularityEstimator(
      simulation.global().item_embeddings, simulation.labels(), split.train, config.estimator);
  return eval::ClassifierF1(est, simulation.global().item_embeddings, simulation.labels(),
                            split.heldout);
}

std::optional<int> EpochsToReach(std::span<const eval::MetricRow> rows, int attack_start_epoch,
                                 double threshold) {
  for (const eval::MetricRow& r : rows) {
    if (r.epoch >= attack_start_epoch && r.er >= threshold) {
      return r.epoch - attack_start_epoch + 1;
    }
  }
  return std::nullopt;
}

nlohmann::json MetricRowToJson(const eval::MetricRow& row) {
  nlohmann::json j = {{"epoch", row.epoch},
                      {"er", row.er},
                      {"hr", row.hr},
                      {"aggregate_norm", row.aggregate_norm}};
  j["kl"] = row.kl ? nlohmann::json(*row.kl) : nlohmann::json(nullptr);
  j["f1"] = row.f1 ? nlohmann::json(*row.f1) : nlohmann::json(nullptr);
  return j;
}

eval::MetricRow MetricRowFromJson(const nlohmann::json& j) {
  eval::MetricRow row;
  row.epoch = j.at("epoch").get<int>();
  row.er = j.at("er").get<double>();
  row.hr = j.at("hr").get<double>();
  row.aggregate_norm = j.at("aggregate_norm").get<double>();
  if (!j.at("kl").is_null()) row.kl = j.at("kl").get<double>();
  if (!j.at("f1").is_null()) row.f1 = j.at("f1").get<double>();
  return row;
}

ExperimentResult RunExperiment(const config::ExperimentConfig& config,
                               const RunOptions& options) {
  config.Validate();
  const PreparedData prepared = PrepareData(config);
  federation::Simulation sim = MakeSimulation(config, prepared);
  spdlog::info("{} users ({} malicious), {} items, target item {} ({} interactions)",
               prepared.dataset.users.size(), prepared.malicious.size(),
               prepared.dataset.num_items, prepared.target,
               prepared.labels.counts.at(prepared.target));

  ExperimentResult result;
  result.target = prepared.target;
  if (options.resume_from) {
    std::ifstream in(*options.resume_from);
    if (!in) throw std::runtime_error("cannot open checkpoint " + *options.resume_from);
    const nlohmann::json j = nlohmann::json::parse(in);
    if (j.value("format", "") != "fedpoison.run" || j.value("version", 0) != 1) {
      throw std::runtime_error("not a run checkpoint: " + *options.resume_from);
    }
    if (j.at("identity").get<std::string>() != RunIdentity(config)) {
      throw config::ConfigError("checkpoint was written by a different configuration");
    }
    sim.Restore(j.at("simulation"));
    for (const auto& r : j.at("metrics")) result.rows.push_back(MetricRowFromJson(r));
    spdlog::info("resumed at round {}", sim.next_round());
  }

  const fs::path dir(config.output_dir);
  std::ofstream metrics;
  std::ofstream timing;
  const std::set<int> exports(config.export_embeddings_at.begin(),
                              config.export_embeddings_at.end());
  if (options.write_outputs) {
    fs::create_directories(dir);
    {
      std::ofstream resolved = OpenOutput(dir / "resolved_config.ini");
      resolved << config::ToIni(config);
    }
    metrics = OpenOutput(dir / "metrics.csv");
    eval::WriteMetricsHeader(metrics);
    for (const eval::MetricRow& r : result.rows) eval::WriteMetricRow(metrics, r);
    const bool resumed = options.resume_from.has_value();
    timing = OpenOutput(dir / "timing.csv", resumed ? std::ios::app : std::ios::trunc);
    if (!resumed) timing << "epoch,seconds\n";
    if (config.checkpoint_every > 0) fs::create_directories(dir / "checkpoints");
    if (sim.next_round() == 1 && exports.count(0)) ExportEmbeddings(dir, 0, sim, prepared.target);
  }

  auto checkpoint = [&]() {
    nlohmann::json j;
    j["format"] = "fedpoison.run";
    j["version"] = 1;
    j["identity"] = RunIdentity(config);
    j["simulation"] = sim.Checkpoint();
    auto& rows = j["metrics"] = nlohmann::json::array();
    for (const eval::MetricRow& r : result.rows) rows.push_back(MetricRowToJson(r));
    return j;
  };

  while (sim.next_round() <= config.rounds) {
    const auto start = std::chrono::steady_clock::now();
    federation::RoundReport report;
    try {
      report = sim.RunRound();
    } catch (const std::exception& e) {
      if (options.write_outputs) {
        WriteJson(dir / "final_checkpoint.json", checkpoint());
        spdlog::error("round {} failed; state before it saved to {}", sim.next_round(),
                      (dir / "final_checkpoint.json").string());
      }
      throw;
    }
    const eval::RankingMetrics m = sim.Evaluate();
    eval::MetricRow row;
    row.epoch = report.round;
    row.er = m.exposure_rate;
    row.hr = m.hit_ratio;
    row.kl = report.kl;
    row.f1 = report.f1;
    row.aggregate_norm = report.aggregate_norm;
    if (!row.f1 && config.f1_probe_every > 0 && report.round % config.f1_probe_every == 0) {
      row.f1 = ProbePopularityF1(sim, config, prepared.target);
    }
    result.rows.push_back(row);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    spdlog::debug("epoch {}: ER {:.4f} HR {:.4f} ({:.2f}s)", row.epoch, row.er, row.hr, seconds);
    if (!options.write_outputs) continue;
    eval::WriteMetricRow(metrics, row);
    metrics.flush();
    timing << fmt::format("{},{:.3f}\n", row.epoch, seconds);
    if (exports.count(row.epoch)) ExportEmbeddings(dir, row.epoch, sim, prepared.target);
    if (config.checkpoint_every > 0 && row.epoch % config.checkpoint_every == 0) {
      WriteJson(dir / "checkpoints" / fmt::format("round_{}.json", row.epoch), checkpoint());
    }
  }
  if (options.write_outputs) WriteJson(dir / "final_checkpoint.json", checkpoint());
  return result;
}

}  // namespace fedpoison::experiment
