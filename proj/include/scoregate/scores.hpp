#pragma once

// ScoresActivation: a learnable score vector s whose softmax w = softmax(s)
// multiplies the inputs of the following linear layer elementwise. The
// weights w double as a global feature-importance ranking.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scoregate/error.hpp"
#include "scoregate/rng.hpp"
#include "scoregate/tensor.hpp"

namespace scoregate {

enum class ScoresInit { zero, random_uniform, from_values };

inline const char* to_string(ScoresInit init) {
  switch (init) {
    case ScoresInit::zero: return "zero";
    case ScoresInit::random_uniform: return "random-uniform";
    case ScoresInit::from_values: return "from-values";
  }
  return "?";
}

inline ScoresInit scores_init_from_string(const std::string& name) {
  if (name == "zero") return ScoresInit::zero;
  if (name == "random-uniform" || name == "random") return ScoresInit::random_uniform;
  if (name == "from-values" || name == "gt") return ScoresInit::from_values;
  throw ParseError("unknown scores initialisation '" + name + "'");
}

struct ScoresLayer {
  std::vector<double> scores;
  ScoresInit init = ScoresInit::zero;

  std::size_t size() const noexcept { return scores.size(); }
};

enum class RankingSource { scores, shap, ground_truth };

inline const char* to_string(RankingSource source) {
  switch (source) {
    case RankingSource::scores: return "scores";
    case RankingSource::shap: return "shap";
    case RankingSource::ground_truth: return "ground-truth";
  }
  return "?";
}

inline RankingSource ranking_source_from_string(const std::string& name) {
  if (name == "scores") return RankingSource::scores;
  if (name == "shap") return RankingSource::shap;
  if (name == "ground-truth") return RankingSource::ground_truth;
  throw ParseError("unknown ranking source '" + name + "'");
}

// Features ordered by descending importance; equal values keep ascending
// feature index.
struct Ranking {
  std::vector<std::size_t> order;
  std::vector<double> values;
  RankingSource source = RankingSource::scores;

  static Ranking from_values(std::vector<double> values, RankingSource source) {
    Ranking r;
    r.order.resize(values.size());
    std::iota(r.order.begin(), r.order.end(), std::size_t{0});
    std::stable_sort(r.order.begin(), r.order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    r.values = std::move(values);
    r.source = source;
    return r;
  }

  std::size_t size() const noexcept { return order.size(); }

  // positions()[feature] is that feature's 0-based rank.
  std::vector<std::size_t> positions() const {
    std::vector<std::size_t> pos(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) pos[order[k]] = k;
    return pos;
  }

  friend bool operator==(const Ranking&, const Ranking&) = default;
};

inline void to_json(nlohmann::json& j, const Ranking& r) {
  j = nlohmann::json{{"order", r.order}, {"values", r.values}, {"source", to_string(r.source)}};
}

inline void from_json(const nlohmann::json& j, Ranking& r) {
  r.order = j.at("order").get<std::vector<std::size_t>>();
  r.values = j.at("values").get<std::vector<double>>();
  r.source = ranking_source_from_string(j.at("source").get<std::string>());
  if (r.order.size() != r.values.size()) throw ParseError("ranking: order/values length mismatch");
  std::vector<bool> seen(r.order.size(), false);
  for (std::size_t f : r.order) {
    if (f >= seen.size() || seen[f]) throw ParseError("ranking: order is not a permutation");
    seen[f] = true;
  }
}

inline ScoresLayer init_scores(std::size_t d, ScoresInit strategy, std::uint64_t seed,
                               std::optional<std::vector<double>> values = std::nullopt) {
  if (d == 0) throw ContractError("init_scores: d must be at least 1");
  if (values.has_value() != (strategy == ScoresInit::from_values)) {
    throw ContractError("init_scores: values must be given exactly for from-values");
  }
  ScoresLayer layer;
  layer.init = strategy;
  switch (strategy) {
    case ScoresInit::zero:
      layer.scores.assign(d, 0.0);
      break;
    case ScoresInit::random_uniform: {
      Rng rng(seed, stream_id("scores"));
      layer.scores.resize(d);
      for (double& v : layer.scores) v = rng.uniform(-1.0, 1.0);
      break;
    }
    case ScoresInit::from_values:
      if (values->size() != d) {
        throw ContractError("init_scores: expected " + std::to_string(d) + " values, got " +
                            std::to_string(values->size()));
      }
      layer.scores = std::move(*values);
      break;
  }
  return layer;
}

inline std::vector<double> scores_to_weights(std::span<const double> scores) {
  if (scores.empty()) throw ContractError("scores_to_weights: empty score vector");
  for (double v : scores) {
    if (!std::isfinite(v)) throw NumericError("scores_to_weights: non-finite score");
  }
  const double mx = *std::max_element(scores.begin(), scores.end());
  std::vector<double> w(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    w[i] = std::exp(scores[i] - mx);
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

inline std::vector<double> weights(const ScoresLayer& layer) {
  return scores_to_weights(layer.scores);
}

// Y[k][i] = w[i] * X[k][i]
inline Tensor gate(std::span<const double> w, const Tensor& x) {
  if (w.size() != x.cols()) {
    throw DimensionError("gate: " + std::to_string(w.size()) + " weights for " +
                         std::to_string(x.cols()) + " features");
  }
  Tensor out(x.rows(), x.cols());
  for (std::size_t k = 0; k < x.rows(); ++k)
    for (std::size_t i = 0; i < x.cols(); ++i) out(k, i) = w[i] * x(k, i);
  return out;
}

// Closed-form partial derivatives of the gated hidden layer
//   y_k = sum_i W[i][k] * w_i * x_i,   w = softmax(s)
struct GatedLayerGrads {
  Tensor d_weight;  // d x K, entry (i, k) = dy_k / dW[i][k] = w_i x_i
  Tensor d_scores;  // K x d, entry (k, l) = dy_k / ds_l
};

inline GatedLayerGrads analytic_grads(const Tensor& weight, std::span<const double> scores,
                                      std::span<const double> x) {
  const std::size_t d = weight.rows();
  const std::size_t units = weight.cols();
  if (scores.size() != d || x.size() != d) {
    throw DimensionError("analytic_grads: W is " + weight.shape_string() + " but s has " +
                         std::to_string(scores.size()) + " and x has " +
                         std::to_string(x.size()) + " entries");
  }
  const auto w = scores_to_weights(scores);
  GatedLayerGrads g{Tensor(d, units), Tensor(units, d)};
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t k = 0; k < units; ++k) g.d_weight(i, k) = w[i] * x[i];
  for (std::size_t k = 0; k < units; ++k) {
    for (std::size_t l = 0; l < d; ++l) {
      double acc = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double delta = i == l ? 1.0 : 0.0;
        acc += weight(i, k) * w[i] * (delta - w[l]) * x[i];
      }
      g.d_scores(k, l) = acc;
    }
  }
  return g;
}

inline Ranking extract_ranking(const ScoresLayer& layer) {
  return Ranking::from_values(weights(layer), RankingSource::scores);
}

enum class PenaltyKind { none, entropy, l1 };

inline const char* to_string(PenaltyKind kind) {
  switch (kind) {
    case PenaltyKind::none: return "none";
    case PenaltyKind::entropy: return "entropy";
    case PenaltyKind::l1: return "l1";
  }
  return "?";
}

inline PenaltyKind penalty_kind_from_string(const std::string& name) {
  if (name == "none") return PenaltyKind::none;
  if (name == "entropy") return PenaltyKind::entropy;
  if (name == "l1") return PenaltyKind::l1;
  throw ParseError("unknown regularisation '" + name + "'");
}

// entropy: lambda * -sum w ln w;  l1: lambda * sum |w|, which is the constant
// lambda for softmax weights and therefore contributes no gradient.
inline double sparsity_penalty(std::span<const double> w, PenaltyKind kind, double lambda) {
  if (lambda < 0.0) throw ContractError("sparsity_penalty: lambda must be non-negative");
  if (lambda == 0.0 || kind == PenaltyKind::none) return 0.0;
  double total = 0.0;
  if (kind == PenaltyKind::entropy) {
    for (double v : w)
      if (v > 0.0) total -= v * std::log(v);
  } else {
    for (double v : w) total += std::abs(v);
  }
  return lambda * total;
}

// Gradient of sparsity_penalty(softmax(s)) with respect to s.
// For the entropy H: dH/ds_l = -w_l (ln w_l + H).
inline std::vector<double> sparsity_penalty_grad(std::span<const double> w, PenaltyKind kind,
                                                 double lambda) {
  std::vector<double> g(w.size(), 0.0);
  if (lambda == 0.0 || kind != PenaltyKind::entropy) return g;
  const double h = sparsity_penalty(w, PenaltyKind::entropy, 1.0);
  for (std::size_t l = 0; l < w.size(); ++l) {
    if (w[l] > 0.0) g[l] = -lambda * w[l] * (std::log(w[l]) + h);
  }
  return g;
}

}  // namespace scoregate
