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

#include "fedpoison/model.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>

#include "fedpoison/rng.h"

namespace fedpoison::model {
namespace {

void CheckItem(const GlobalParams& params, ItemId item) {
  if (item >= params.num_items()) {
    throw std::out_of_range("item index " + std::to_string(item) +
                            " out of range");
  }
}

Vec Concat(std::span<const double> a, std::span<const double> b) {
  Vec x;
  x.reserve(a.size() + b.size());
  x.insert(x.end(), a.begin(), a.end());
  x.insert(x.end(), b.begin(), b.end());
  return x;
}

}  // namespace

GlobalParams GlobalParams::Init(std::size_t num_items,
                                const ModelConfig& config, std::uint64_t seed) {
  if (config.dim == 0 || config.tower.empty()) {
    throw std::invalid_argument("ModelConfig: dim and tower must be non-empty");
  }
  GlobalParams p;
  auto emb_rng = MakeRng(seed, {0});
  p.item_embeddings = nn::Tensor2D::Gaussian(num_items, config.dim,
                                             config.embedding_init_std, emb_rng);
  std::vector<std::size_t> dims = {2 * config.dim};
  dims.insert(dims.end(), config.tower.begin(), config.tower.end());
  auto ffn_rng = MakeRng(seed, {2});
  const std::size_t out = config.tower.back();
  p.projection.resize(out);
  if (config.ffn_init == FfnInit::kUnitGaussian) {
    p.ffn = nn::MLPParams::Gaussian(dims, nn::Activation::kRelu,
                                    nn::Activation::kRelu, ffn_rng, 1.0);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (double& h : p.projection) h = dist(ffn_rng);
  } else {
    p.ffn = nn::MLPParams::HeGaussian(dims, nn::Activation::kRelu,
                                      nn::Activation::kRelu, ffn_rng);
    std::normal_distribution<double> dist(
        0.0, 1.0 / std::sqrt(static_cast<double>(out)));
    for (double& h : p.projection) h = dist(ffn_rng);
  }
  p.Validate();
  return p;
}

void GlobalParams::Validate() const {
  if (dim() == 0) throw std::invalid_argument("GlobalParams: d must be > 0");
  ffn.Validate();
  if (ffn.input_dim() != 2 * dim()) {
    throw std::invalid_argument("GlobalParams: FFN input must be 2d");
  }
  if (projection.size() != ffn.output_dim()) {
    throw std::invalid_argument(
        "GlobalParams: projection length must equal FFN output dim");
  }
}

std::size_t GlobalParams::FlatSize() const {
  return item_embeddings.size() + ffn.ParameterCount() + projection.size();
}

std::size_t GlobalParams::ProjectionOffset() const {
  return item_embeddings.size() + ffn.ParameterCount();
}

Vec GlobalParams::Flatten() const {
  Vec out;
  out.reserve(FlatSize());
  out.insert(out.end(), item_embeddings.values().begin(),
             item_embeddings.values().end());
  nn::AppendFlat(ffn, out);
  out.insert(out.end(), projection.begin(), projection.end());
  return out;
}

void GlobalParams::AssignFlat(std::span<const double> flat) {
  if (flat.size() != FlatSize()) {
    throw std::invalid_argument("GlobalParams::AssignFlat: size mismatch");
  }
  auto& items = item_embeddings.values();
  std::copy_n(flat.begin(), items.size(), items.begin());
  const std::size_t off = nn::AssignFlat(flat, items.size(), ffn);
  std::copy_n(flat.begin() + off, projection.size(), projection.begin());
}

Vec InitUserEmbedding(UserId user, const ModelConfig& config,
                      std::uint64_t seed) {
  auto rng = MakeRng(seed, {1, user});
  std::normal_distribution<double> dist(0.0, config.embedding_init_std);
  Vec u(config.dim);
  for (double& v : u) v = dist(rng);
  return u;
}

GradientUpdate GradientUpdate::ZerosLike(const GlobalParams& params) {
  GradientUpdate g;
  g.ffn = nn::MLPGrads::ZerosLike(params.ffn);
  g.projection.assign(params.projection.size(), 0.0);
  return g;
}

void GradientUpdate::Validate(const GlobalParams& params) const {
  for (const auto& [item, row] : item_rows) {
    if (item >= params.num_items() || row.size() != params.dim()) {
      throw std::invalid_argument("GradientUpdate: bad item row " +
                                  std::to_string(item));
    }
  }
  if (!ffn.Matches(params.ffn)) {
    throw std::invalid_argument("GradientUpdate: FFN shape mismatch");
  }
  if (projection.size() != params.projection.size()) {
    throw std::invalid_argument("GradientUpdate: projection size mismatch");
  }
}

void GradientUpdate::Scale(double factor) {
  for (auto& [item, row] : item_rows) {
    for (double& v : row) v *= factor;
  }
  ffn.Scale(factor);
  for (double& v : projection) v *= factor;
}

void GradientUpdate::AddScaled(const GradientUpdate& other, double factor) {
  for (const auto& [item, row] : other.item_rows) {
    auto [it, inserted] = item_rows.try_emplace(item, row.size(), 0.0);
    nn::Axpy(factor, row, it->second);
  }
  ffn.AddScaled(other.ffn, factor);
  nn::Axpy(factor, other.projection, projection);
}

double GradientUpdate::Norm() const {
  double s = 0.0;
  for (const auto& [item, row] : item_rows) s += nn::SquaredNorm(row);
  for (const auto& l : ffn.layers) {
    s += nn::SquaredNorm(l.weight.values());
    s += nn::SquaredNorm(l.bias);
  }
  s += nn::SquaredNorm(projection);
  return std::sqrt(s);
}

bool GradientUpdate::AllFinite() const {
  for (const auto& [item, row] : item_rows) {
    if (!nn::AllFinite(row)) return false;
  }
  return ffn.AllFinite() && nn::AllFinite(projection);
}

Vec GradientUpdate::ToDense(const GlobalParams& like) const {
  Validate(like);
  Vec out(like.FlatSize(), 0.0);
  const std::size_t d = like.dim();
  for (const auto& [item, row] : item_rows) {
    std::copy(row.begin(), row.end(), out.begin() + item * d);
  }
  Vec tail;
  nn::AppendFlat(ffn, tail);
  std::copy(tail.begin(), tail.end(), out.begin() + like.FfnOffset());
  std::copy(projection.begin(), projection.end(),
            out.begin() + like.ProjectionOffset());
  return out;
}

GradientUpdate GradientUpdate::FromDense(std::span<const double> dense,
                                         const GlobalParams& like) {
  if (dense.size() != like.FlatSize()) {
    throw std::invalid_argument("GradientUpdate::FromDense: size mismatch");
  }
  GradientUpdate g = ZerosLike(like);
  const std::size_t d = like.dim();
  for (std::size_t i = 0; i < like.num_items(); ++i) {
    auto row = dense.subspan(i * d, d);
    if (std::any_of(row.begin(), row.end(), [](double v) { return v != 0.0; })) {
      g.item_rows.emplace(static_cast<ItemId>(i), Vec(row.begin(), row.end()));
    }
  }
  nn::AssignFlat(dense, like.FfnOffset(), g.ffn);
  std::copy_n(dense.begin() + like.ProjectionOffset(), g.projection.size(),
              g.projection.begin());
  return g;
}

const std::vector<std::string>& WireFieldNames() {
  static const std::vector<std::string> kNames = {"format", "version",
                                                  "item_rows", "ffn",
                                                  "projection"};
  return kNames;
}

nlohmann::json GradientUpdate::ToWire() const {
  nlohmann::json j;
  j["format"] = "fedpoison.update";
  j["version"] = 1;
  auto& rows = j["item_rows"] = nlohmann::json::array();
  for (const auto& [item, row] : item_rows) {
    rows.push_back({{"item", item}, {"grad", row}});
  }
  auto& layers = j["ffn"] = nlohmann::json::array();
  for (const auto& l : ffn.layers) {
    layers.push_back({{"rows", l.weight.rows()},
                      {"cols", l.weight.cols()},
                      {"weight", l.weight.values()},
                      {"bias", l.bias}});
  }
  j["projection"] = projection;
  return j;
}

GradientUpdate GradientUpdate::FromWire(const nlohmann::json& j) {
  if (j.value("format", "") != "fedpoison.update" || j.value("version", 0) != 1) {
    throw std::runtime_error("unsupported update message");
  }
  GradientUpdate g;
  for (const auto& r : j.at("item_rows")) {
    g.item_rows.emplace(r.at("item").get<ItemId>(), r.at("grad").get<Vec>());
  }
  for (const auto& l : j.at("ffn")) {
    g.ffn.layers.push_back(
        {nn::Tensor2D(l.at("rows").get<std::size_t>(),
                      l.at("cols").get<std::size_t>(), l.at("weight").get<Vec>()),
         l.at("bias").get<Vec>()});
  }
  g.projection = j.at("projection").get<Vec>();
  return g;
}

void ApplyUpdate(GlobalParams& params, const GradientUpdate& update, double lr) {
  update.Validate(params);
  for (const auto& [item, row] : update.item_rows) {
    nn::Axpy(-lr, row, params.item_embeddings.row(item));
  }
  nn::SgdApply(params.ffn, update.ffn, lr);
  nn::Axpy(-lr, update.projection, params.projection);
}

double ScoreLogit(const GlobalParams& params, std::span<const double> user,
                  ItemId item) {
  CheckItem(params, item);
  const Vec x = Concat(user, params.item_embeddings.row(item));
  const Vec out = nn::MlpForward(params.ffn, x);
  return nn::Dot(params.projection, out);
}

double Score(const GlobalParams& params, std::span<const double> user,
             ItemId item) {
  return nn::Sigmoid(ScoreLogit(params, user, item));
}

double Score(const LocalClientState& state, ItemId item) {
  return Score(state.shared, state.user_embedding, item);
}

LossAndGrads LocalLossAndGrads(const GlobalParams& params,
                               std::span<const double> user,
                               std::span<const Sample> batch) {
  const std::size_t d = params.dim();
  if (user.size() != d) {
    throw std::invalid_argument("LocalLossAndGrads: user embedding size");
  }
  LossAndGrads out{0.0, GradientUpdate::ZerosLike(params), Vec(d, 0.0)};
  nn::ForwardCache cache;
  Vec upstream(params.projection.size());
  for (const Sample& s : batch) {
    CheckItem(params, s.item);
    if (s.label != 0.0 && s.label != 1.0) {
      throw std::invalid_argument("LocalLossAndGrads: label must be 0 or 1");
    }
    const Vec x = Concat(user, params.item_embeddings.row(s.item));
    const Vec h_in = nn::MlpForward(params.ffn, x, &cache);
    const double p = nn::Sigmoid(nn::Dot(params.projection, h_in));
    out.loss += nn::BinaryCrossEntropy(p, s.label);
    // d/dz of the logit-form cross-entropy.
    const double dz = p - s.label;
    nn::Axpy(dz, h_in, out.update.projection);
    for (std::size_t i = 0; i < upstream.size(); ++i) {
      upstream[i] = dz * params.projection[i];
    }
    const Vec gx =
        nn::MlpBackwardAccumulate(params.ffn, cache, upstream, out.update.ffn);
    for (std::size_t k = 0; k < d; ++k) out.user_grad[k] += gx[k];
    auto [it, inserted] = out.update.item_rows.try_emplace(s.item, d, 0.0);
    for (std::size_t k = 0; k < d; ++k) it->second[k] += gx[d + k];
  }
  return out;
}

LossAndGrads LocalLossAndGrads(const LocalClientState& state,
                               std::span<const Sample> batch) {
  return LocalLossAndGrads(state.shared, state.user_embedding, batch);
}

ItemScorer::ItemScorer(const GlobalParams& params) : params_(params) {
  const nn::DenseLayer& first = params.ffn.layers.front();
  const std::size_t d = params.dim();
  const std::size_t h1 = first.out_dim();
  item_part_ = nn::Tensor2D(params.num_items(), h1);
  for (std::size_t j = 0; j < params.num_items(); ++j) {
    const auto v = params.item_embeddings.row(j);
    for (std::size_t i = 0; i < h1; ++i) {
      const double* w = first.weight.values().data() + i * 2 * d + d;
      double s = first.bias[i];
      for (std::size_t k = 0; k < d; ++k) s += w[k] * v[k];
      item_part_.at(j, i) = s;
    }
  }
}

Vec ItemScorer::Logits(std::span<const double> user) const {
  const auto& layers = params_.ffn.layers;
  const nn::DenseLayer& first = layers.front();
  const std::size_t d = params_.dim();
  const std::size_t h1 = first.out_dim();
  Vec user_part(h1, 0.0);
  for (std::size_t i = 0; i < h1; ++i) {
    const double* w = first.weight.values().data() + i * 2 * d;
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += w[k] * user[k];
    user_part[i] = s;
  }
  Vec logits(params_.num_items());
  Vec a(h1);
  Vec b;
  for (std::size_t j = 0; j < params_.num_items(); ++j) {
    const auto row = item_part_.row(j);
    for (std::size_t i = 0; i < h1; ++i) {
      const double z = row[i] + user_part[i];
      a[i] = first.activation == nn::Activation::kRelu
                 ? (z > 0.0 ? z : 0.0)
                 : (first.activation == nn::Activation::kSigmoid ? nn::Sigmoid(z)
                                                                 : z);
    }
    const Vec* x = &a;
    for (std::size_t k = 1; k < layers.size(); ++k) {
      const nn::DenseLayer& l = layers[k];
      Vec y(l.out_dim());
      const double* w = l.weight.values().data();
      for (std::size_t i = 0; i < l.out_dim(); ++i) {
        double s = l.bias[i];
        const double* wi = w + i * l.in_dim();
        for (std::size_t c = 0; c < l.in_dim(); ++c) s += wi[c] * (*x)[c];
        y[i] = l.activation == nn::Activation::kRelu
                   ? (s > 0.0 ? s : 0.0)
                   : (l.activation == nn::Activation::kSigmoid ? nn::Sigmoid(s)
                                                               : s);
      }
      b = std::move(y);
      x = &b;
    }
    logits[j] = nn::Dot(params_.projection, *x);
  }
  return logits;
}

std::vector<ItemId> RecommendTopK(std::span<const double> logits, std::size_t k,
                                  std::span<const ItemId> excluded) {
  if (k == 0) throw std::invalid_argument("RecommendTopK: K must be >= 1");
  std::vector<bool> skip(logits.size(), false);
  for (ItemId e : excluded) {
    if (e < skip.size()) skip[e] = true;
  }
  std::vector<ItemId> candidates;
  candidates.reserve(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (!skip[j]) candidates.push_back(static_cast<ItemId>(j));
  }
  const auto better = [&](ItemId a, ItemId b) {
    if (logits[a] != logits[b]) return logits[a] > logits[b];
    return a < b;
  };
  const std::size_t take = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + take,
                    candidates.end(), better);
  candidates.resize(take);
  return candidates;
}

std::vector<ItemId> RecommendTopK(const GlobalParams& params,
                                  std::span<const double> user, std::size_t k,
                                  std::span<const ItemId> excluded) {
  const ItemScorer scorer(params);
  return RecommendTopK(scorer.Logits(user), k, excluded);
}

std::vector<Sample> TrainingSamples(const data::UserData& user) {
  std::vector<Sample> samples;
  samples.reserve(user.positives.size() + user.negatives.size());
  for (ItemId i : user.positives) samples.push_back({i, 1.0});
  for (ItemId i : user.negatives) samples.push_back({i, 0.0});
  return samples;
}

LocalTrainResult TrainLocal(const GlobalParams& global, Vec& user_embedding,
                            const data::UserData& user, double lr,
                            std::size_t batch_size, std::mt19937_64& rng) {
  if (batch_size == 0) throw std::invalid_argument("TrainLocal: batch size 0");
  GlobalParams local = global;
  std::vector<Sample> samples = TrainingSamples(user);
  std::shuffle(samples.begin(), samples.end(), rng);
  std::vector<ItemId> touched;
  double total_loss = 0.0;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    const std::span<const Sample> batch(samples.data() + start, end - start);
    LossAndGrads g = LocalLossAndGrads(local, user_embedding, batch);
    total_loss += g.loss;
    for (const auto& [item, row] : g.update.item_rows) touched.push_back(item);
    ApplyUpdate(local, g.update, lr);
    nn::Axpy(-lr, g.user_grad, user_embedding);
  }
  std::sort(touched.begin(), touched.end());
  touched.erase(std::unique(touched.begin(), touched.end()), touched.end());

  LocalTrainResult result{GradientUpdate::ZerosLike(global), total_loss};
  const double inv = 1.0 / lr;
  for (ItemId item : touched) {
    Vec row(global.dim());
    const auto before = global.item_embeddings.row(item);
    const auto after = local.item_embeddings.row(item);
    for (std::size_t k = 0; k < row.size(); ++k) {
      row[k] = (before[k] - after[k]) * inv;
    }
    result.update.item_rows.emplace(item, std::move(row));
  }
  for (std::size_t l = 0; l < global.ffn.layers.size(); ++l) {
    const auto& b = global.ffn.layers[l];
    const auto& a = local.ffn.layers[l];
    auto& g = result.update.ffn.layers[l];
    for (std::size_t k = 0; k < b.weight.size(); ++k) {
      g.weight.values()[k] = (b.weight.values()[k] - a.weight.values()[k]) * inv;
    }
    for (std::size_t k = 0; k < b.bias.size(); ++k) {
      g.bias[k] = (b.bias[k] - a.bias[k]) * inv;
    }
  }
  for (std::size_t k = 0; k < global.projection.size(); ++k) {
    result.update.projection[k] =
        (global.projection[k] - local.projection[k]) * inv;
  }
  return result;
}

}  // namespace fedpoison::model
