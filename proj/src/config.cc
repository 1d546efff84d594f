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

#include "fedpoison/config.h"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "boost/property_tree/ini_parser.hpp"
#include "boost/property_tree/ptree.hpp"
#include "fmt/format.h"
#include "fmt/ranges.h"

namespace fedpoison::config {
namespace {

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;
using Getter = std::function<std::string(const ExperimentConfig&)>;

struct Field {
  std::string section;
  std::string key;
  Setter set;
  Getter get;
};

std::string Trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> SplitList(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    const std::string t = Trim(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

template <typename T>
T ParseNumber(const std::string& text, const std::string& name) {
  const std::string t = Trim(text);
  T value{};
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw ConfigError(fmt::format("{}: cannot parse '{}' as a number", name, text));
  }
  return value;
}

bool ParseBool(const std::string& text, const std::string& name) {
  const std::string t = Trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError(fmt::format("{}: expected a boolean, got '{}'", name, text));
}

template <typename T>
std::vector<T> ParseNumberList(const std::string& text, const std::string& name) {
  std::vector<T> out;
  for (const std::string& s : SplitList(text)) out.push_back(ParseNumber<T>(s, name));
  return out;
}

bool IsAuto(const std::string& text) { return Trim(text) == "auto"; }

template <typename T>
std::string Join(const std::vector<T>& values) {
  return fmt::format("{}", fmt::join(values, ","));
}

template <typename T>
Field Number(std::string section, std::string key, T ExperimentConfig::*member) {
  const std::string name = section + "." + key;
  return {section, key,
          [member, name](ExperimentConfig& c, const std::string& v) {
            c.*member = ParseNumber<T>(v, name);
          },
          [member](const ExperimentConfig& c) { return fmt::format("{}", c.*member); }};
}

template <typename T, typename Get>
Field NumberAt(std::string section, std::string key, Get access) {
  const std::string name = section + "." + key;
  return {section, key,
          [access, name](ExperimentConfig& c, const std::string& v) {
            access(c) = ParseNumber<T>(v, name);
          },
          [access](const ExperimentConfig& c) {
            return fmt::format("{}", access(c));
          }};
}

template <typename Get>
Field BoolAt(std::string section, std::string key, Get access) {
  const std::string name = section + "." + key;
  return {section, key,
          [access, name](ExperimentConfig& c, const std::string& v) {
            access(c) = ParseBool(v, name);
          },
          [access](const ExperimentConfig& c) {
            return std::string(access(c) ? "true" : "false");
          }};
}

template <typename T, typename Get>
Field OptionalAt(std::string section, std::string key, Get access) {
  const std::string name = section + "." + key;
  return {section, key,
          [access, name](ExperimentConfig& c, const std::string& v) {
            if (IsAuto(v)) {
              access(c).reset();
            } else {
              access(c) = ParseNumber<T>(v, name);
            }
          },
          [access](const ExperimentConfig& c) {
            const auto& value = access(c);
            return value ? fmt::format("{}", *value) : std::string("auto");
          }};
}

template <typename T, typename Get>
Field ListAt(std::string section, std::string key, Get access) {
  const std::string name = section + "." + key;
  return {section, key,
          [access, name](ExperimentConfig& c, const std::string& v) {
            access(c) = ParseNumberList<T>(v, name);
          },
          [access](const ExperimentConfig& c) {
            return Join(access(c));
          }};
}

#define FIELD_REF(expr) [](auto& c) -> auto& { return expr; }

const std::vector<Field>& Fields() {
  static const std::vector<Field> fields = [] {
    std::vector<Field> f;
    f.push_back({"data", "path",
                 [](ExperimentConfig& c, const std::string& v) { c.data_path = Trim(v); },
                 [](const ExperimentConfig& c) { return c.data_path; }});
    f.push_back({"data", "separator",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.separator = Trim(v) == "tab" ? "\t" : Trim(v);
                 },
                 [](const ExperimentConfig& c) {
                   return c.separator == "\t" ? std::string("tab") : c.separator;
                 }});
    f.push_back(Number("data", "q", &ExperimentConfig::q));
    f.push_back(ListAt<double>("data", "popularity_cutoffs", FIELD_REF(c.popularity_cutoffs)));
    f.push_back(BoolAt("data", "resample_negatives",
                       FIELD_REF(c.federation.resample_negatives)));

    f.push_back(NumberAt<std::size_t>("synthetic", "users", FIELD_REF(c.synthetic.users)));
    f.push_back(NumberAt<std::size_t>("synthetic", "items", FIELD_REF(c.synthetic.items)));
    f.push_back(NumberAt<std::size_t>("synthetic", "interactions",
                                      FIELD_REF(c.synthetic.interactions)));
    f.push_back(NumberAt<double>("synthetic", "skew", FIELD_REF(c.synthetic.skew)));
    f.push_back(NumberAt<std::size_t>("synthetic", "clusters", FIELD_REF(c.synthetic.clusters)));
    f.push_back(NumberAt<double>("synthetic", "cluster_affinity",
                                 FIELD_REF(c.synthetic.cluster_affinity)));

    f.push_back(NumberAt<std::size_t>("model", "dim", FIELD_REF(c.model.dim)));
    f.push_back(ListAt<std::size_t>("model", "tower", FIELD_REF(c.model.tower)));
    f.push_back(NumberAt<double>("model", "embedding_init_std",
                                 FIELD_REF(c.model.embedding_init_std)));
    f.push_back({"model", "ffn_init",
                 [](ExperimentConfig& c, const std::string& v) {
                   const std::string t = Trim(v);
                   if (t == "he") {
                     c.model.ffn_init = model::FfnInit::kHe;
                   } else if (t == "unit_gaussian") {
                     c.model.ffn_init = model::FfnInit::kUnitGaussian;
                   } else {
                     throw ConfigError("model.ffn_init: expected he or unit_gaussian, got '" +
                                       v + "'");
                   }
                 },
                 [](const ExperimentConfig& c) {
                   return std::string(c.model.ffn_init == model::FfnInit::kHe ? "he"
                                                                              : "unit_gaussian");
                 }});

    f.push_back(Number("federation", "rounds", &ExperimentConfig::rounds));
    f.push_back(Number("federation", "attack_start_epoch", &ExperimentConfig::attack_start_epoch));
    f.push_back(NumberAt<double>("federation", "client_fraction",
                                 FIELD_REF(c.federation.client_fraction)));
    f.push_back(NumberAt<double>("federation", "lr", FIELD_REF(c.federation.lr)));
    f.push_back(NumberAt<std::size_t>("federation", "batch_size",
                                      FIELD_REF(c.federation.batch_size)));
    f.push_back(BoolAt("federation", "force_include_malicious",
                       FIELD_REF(c.federation.force_include_malicious)));
    f.push_back(NumberAt<std::size_t>("federation", "er_k", FIELD_REF(c.federation.er_k)));
    f.push_back(NumberAt<std::size_t>("federation", "hr_k", FIELD_REF(c.federation.hr_k)));

    f.push_back({"attack", "mode",
                 [](ExperimentConfig& c, const std::string& v) {
                   try {
                     c.mode = attack::ParseAttackMode(Trim(v));
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(std::string("attack.mode: ") + e.what());
                   }
                 },
                 [](const ExperimentConfig& c) {
                   return std::string(attack::AttackModeName(c.mode));
                 }});
    f.push_back(Number("attack", "malicious_fraction", &ExperimentConfig::malicious_fraction));
    f.push_back(OptionalAt<double>("attack", "alpha", FIELD_REF(c.alpha)));
    f.push_back(Number("attack", "gamma", &ExperimentConfig::gamma));
    f.push_back(Number("attack", "craft_epochs", &ExperimentConfig::craft_epochs));
    f.push_back(Number("attack", "craft_lr", &ExperimentConfig::craft_lr));
    f.push_back(Number("attack", "p_norm", &ExperimentConfig::p_norm));
    f.push_back({"attack", "target",
                 [](ExperimentConfig& c, const std::string& v) {
                   if (Trim(v) == "least_popular") {
                     c.target.reset();
                   } else {
                     c.target = ParseNumber<data::ItemId>(v, "attack.target");
                   }
                 },
                 [](const ExperimentConfig& c) {
                   return c.target ? fmt::format("{}", *c.target)
                                   : std::string("least_popular");
                 }});
    f.push_back(OptionalAt<std::size_t>("attack", "fillers", FIELD_REF(c.fillers)));
    f.push_back(ListAt<std::size_t>("attack", "estimator_hidden", FIELD_REF(c.estimator.hidden)));
    f.push_back(NumberAt<int>("attack", "estimator_epochs", FIELD_REF(c.estimator.epochs)));
    f.push_back(NumberAt<double>("attack", "estimator_lr", FIELD_REF(c.estimator.lr)));
    f.push_back(NumberAt<double>("attack", "estimator_weight_decay",
                                 FIELD_REF(c.estimator.weight_decay)));
    f.push_back(NumberAt<std::size_t>("attack", "estimator_batch_size",
                                      FIELD_REF(c.estimator.batch_size)));
    f.push_back(NumberAt<double>("attack", "estimator_holdout",
                                 FIELD_REF(c.estimator.holdout_fraction)));
    f.push_back(NumberAt<std::uint64_t>("attack", "estimator_seed", FIELD_REF(c.estimator.seed)));

    f.push_back({"defense", "rule",
                 [](ExperimentConfig& c, const std::string& v) {
                   try {
                     c.federation.rule = defense::ParseAggregationRule(Trim(v));
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(std::string("defense.rule: ") + e.what());
                   }
                 },
                 [](const ExperimentConfig& c) {
                   return std::string(defense::AggregationRuleName(c.federation.rule));
                 }});
    f.push_back(OptionalAt<std::size_t>("defense", "byzantine", FIELD_REF(c.federation.byzantine)));

    f.push_back(Number("seeds", "data", &ExperimentConfig::data_seed));
    f.push_back(Number("seeds", "model", &ExperimentConfig::model_seed));
    f.push_back(NumberAt<std::uint64_t>("seeds", "round", FIELD_REF(c.federation.round_seed)));

    f.push_back({"output", "dir",
                 [](ExperimentConfig& c, const std::string& v) { c.output_dir = Trim(v); },
                 [](const ExperimentConfig& c) { return c.output_dir; }});
    f.push_back(Number("output", "checkpoint_every", &ExperimentConfig::checkpoint_every));
    f.push_back(ListAt<int>("output", "export_embeddings_at", FIELD_REF(c.export_embeddings_at)));
    f.push_back(NumberAt<std::size_t>("output", "kl_bins", FIELD_REF(c.federation.kl_bins)));
    f.push_back(Number("output", "f1_probe_every", &ExperimentConfig::f1_probe_every));
    return f;
  }();
  return fields;
}

#undef FIELD_REF

const Field& FindField(const std::string& section, const std::string& key) {
  for (const Field& f : Fields()) {
    if (f.section == section && f.key == key) return f;
  }
  throw ConfigError(fmt::format("unknown configuration key '{}.{}'", section, key));
}

}  // namespace

double ExperimentConfig::ResolvedAlpha() const {
  if (alpha) return *alpha;
  return malicious_fraction < 0.15 ? 60.0 : 20.0;
}

void ExperimentConfig::Validate() const {
  auto require = [](bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
  };
  require(q >= 1, "data.q must be at least 1");
  require(!popularity_cutoffs.empty(), "data.popularity_cutoffs must not be empty");
  for (std::size_t i = 0; i < popularity_cutoffs.size(); ++i) {
    const double c = popularity_cutoffs[i];
    require(c > 0.0 && c < 1.0, "data.popularity_cutoffs must lie in (0, 1)");
    require(i == 0 || c > popularity_cutoffs[i - 1],
            "data.popularity_cutoffs must be strictly increasing");
  }
  if (data_path.empty()) {
    try {
      synthetic.Validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("synthetic: ") + e.what());
    }
  }
  require(model.dim >= 1, "model.dim must be at least 1");
  require(!model.tower.empty(), "model.tower must not be empty");
  for (std::size_t w : model.tower) require(w >= 1, "model.tower widths must be positive");
  require(model.embedding_init_std > 0.0, "model.embedding_init_std must be positive");
  require(rounds >= 1, "federation.rounds must be at least 1");
  require(attack_start_epoch >= 1, "federation.attack_start_epoch must be at least 1");
  try {
    federation.Validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("federation: ") + e.what());
  }
  require(malicious_fraction >= 0.0 && malicious_fraction < 1.0,
          "attack.malicious_fraction must lie in [0, 1)");
  require(mode == attack::AttackMode::kNone || malicious_fraction > 0.0,
          "attack.malicious_fraction must be positive when an attack is configured");
  require(ResolvedAlpha() >= 0.0, "attack.alpha must be non-negative");
  require(gamma >= 0.0, "attack.gamma must be non-negative");
  require(craft_epochs >= 0, "attack.craft_epochs must be non-negative");
  require(craft_lr > 0.0, "attack.craft_lr must be positive");
  require(p_norm >= 1.0, "attack.p_norm must be at least 1");
  require(estimator.epochs >= 0, "attack.estimator_epochs must be non-negative");
  require(estimator.lr > 0.0, "attack.estimator_lr must be positive");
  require(estimator.weight_decay >= 0.0, "attack.estimator_weight_decay must be non-negative");
  require(estimator.batch_size >= 1, "attack.estimator_batch_size must be at least 1");
  require(estimator.holdout_fraction >= 0.0 && estimator.holdout_fraction < 1.0,
          "attack.estimator_holdout must lie in [0, 1)");
  require(!output_dir.empty(), "output.dir must not be empty");
  require(checkpoint_every >= 0, "output.checkpoint_every must be non-negative");
  require(f1_probe_every >= 0, "output.f1_probe_every must be non-negative");
  for (int e : export_embeddings_at) {
    require(e >= 0, "output.export_embeddings_at entries must be non-negative");
  }
}

void ApplyOverride(ExperimentConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  }
  const std::string section = Trim(assignment.substr(0, dot));
  const std::string key = Trim(assignment.substr(dot + 1, eq - dot - 1));
  FindField(section, key).set(config, assignment.substr(eq + 1));
}

ExperimentConfig ParseConfig(std::istream& in, std::span<const std::string> overrides) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(fmt::format("config line {}: {}", e.line(), e.message()));
  }
  ExperimentConfig config;
  for (const auto& [section, children] : tree) {
    if (children.empty()) {
      throw ConfigError("key '" + section + "' appears outside a section");
    }
    for (const auto& [key, value] : children) {
      FindField(section, key).set(config, value.data());
    }
  }
  for (const std::string& o : overrides) ApplyOverride(config, o);
  config.Validate();
  return config;
}

ExperimentConfig LoadConfig(const std::string& path, std::span<const std::string> overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return ParseConfig(in, overrides);
}

std::string ToIni(const ExperimentConfig& config) {
  std::string out;
  std::string current;
  for (const Field& f : Fields()) {
    if (f.section != current) {
      if (!current.empty()) out += "\n";
      out += "[" + f.section + "]\n";
      current = f.section;
    }
    out += f.key + " = " + f.get(config) + "\n";
  }
  return out;
}

std::vector<std::string> KnownKeys() {
  std::vector<std::string> keys;
  for (const Field& f : Fields()) keys.push_back(f.section + "." + f.key);
  return keys;
}

}  // namespace fedpoison::config
