#pragma once

// Post-hoc Shapley baselines and ranking comparison metrics.
//
// Both Shapley routines use a single reference point: a feature that is
// "absent" from a coalition takes its background value. The exact routine
// enumerates all 2^d coalitions; kernel_shap solves the Shapley-kernel
// weighted least-squares problem over a coalition design, with the
// efficiency constraint removed by eliminating the last feature.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "scoregate/error.hpp"
#include "scoregate/models.hpp"
#include "scoregate/rng.hpp"
#include "scoregate/scores.hpp"
#include "scoregate/tensor.hpp"

namespace scoregate {

// Anything that maps a b x d batch to b predictions.
template <typename F>
concept BatchPredictor = requires(const F& f, const Tensor& x) {
  { f(x) } -> std::convertible_to<std::vector<double>>;
};

inline auto predictor(const Model& model) {
  return [&model](const Tensor& x) { return predict(model, x); };
}

inline constexpr std::size_t kMaxExactFeatures = 15;

namespace detail {

inline double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

// Rows of x (or background) selected by each coalition bitmask.
inline Tensor coalition_inputs(std::span<const std::uint64_t> masks, std::span<const double> x,
                               std::span<const double> background) {
  Tensor out(masks.size(), x.size());
  for (std::size_t r = 0; r < masks.size(); ++r)
    for (std::size_t i = 0; i < x.size(); ++i)
      out(r, i) = (masks[r] >> i) & 1U ? x[i] : background[i];
  return out;
}

inline void check_background(std::size_t d, std::span<const double> background) {
  if (background.size() != d) {
    throw DimensionError("background has " + std::to_string(background.size()) +
                         " values for " + std::to_string(d) + " features");
  }
}

}  // namespace detail

// phi_i = sum_{S not containing i} |S|!(d-|S|-1)!/d! [f(S + i) - f(S)]
template <BatchPredictor F>
std::vector<double> exact_shapley(const F& f, std::span<const double> x,
                                  std::span<const double> background) {
  const std::size_t d = x.size();
  detail::check_background(d, background);
  if (d == 0) throw ContractError("exact_shapley: no features");
  if (d > kMaxExactFeatures) {
    throw ContractError("exact_shapley: " + std::to_string(d) + " features exceeds the limit of " +
                        std::to_string(kMaxExactFeatures));
  }
  const std::uint64_t total = std::uint64_t{1} << d;
  std::vector<std::uint64_t> masks(total);
  for (std::uint64_t m = 0; m < total; ++m) masks[m] = m;
  const std::vector<double> value = f(detail::coalition_inputs(masks, x, background));

  // weight[s] = s! (d - s - 1)! / d!
  std::vector<double> weight(d);
  for (std::size_t s = 0; s < d; ++s) {
    weight[s] = 1.0 / (static_cast<double>(d) * detail::binomial(d - 1, s));
  }
  std::vector<double> phi(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const std::uint64_t bit = std::uint64_t{1} << i;
    for (std::uint64_t m = 0; m < total; ++m) {
      if (m & bit) continue;
      phi[i] += weight[static_cast<std::size_t>(std::popcount(m))] * (value[m | bit] - value[m]);
    }
  }
  return phi;
}

// A set of proper coalitions (neither empty nor full) with regression weights.
struct CoalitionDesign {
  std::vector<std::uint64_t> masks;
  std::vector<double> weights;
};

// Shapley kernel pi(S) = (d-1) / (C(d,|S|) |S| (d-|S|)).
inline double shapley_kernel(std::size_t d, std::size_t size) {
  return static_cast<double>(d - 1) /
         (detail::binomial(d, size) * static_cast<double>(size) * static_cast<double>(d - size));
}

inline bool enumerates_all(std::size_t d, std::size_t budget) {
  return d < 63 && static_cast<double>(budget) >= std::ldexp(1.0, static_cast<int>(d)) - 2.0;
}

// Picks `budget` proper coalitions. When the budget covers all 2^d - 2 of them
// the design is complete and carries the exact kernel weights. Otherwise whole
// coalition sizes are enumerated from the outside in (sizes k and d-k together)
// while the budget allows, and the remaining budget is spent on random
// coalitions paired with their complements, drawn with probability
// proportional to the kernel mass of their size.
inline CoalitionDesign design_coalitions(std::size_t d, std::size_t budget, Rng& rng) {
  CoalitionDesign design;
  if (d < 2) return design;
  if (d > 62) throw ContractError("kernel_shap: at most 62 features supported");
  if (enumerates_all(d, budget)) {
    const std::uint64_t total = std::uint64_t{1} << d;
    for (std::uint64_t m = 1; m + 1 < total; ++m) {
      design.masks.push_back(m);
      design.weights.push_back(shapley_kernel(d, static_cast<std::size_t>(std::popcount(m))));
    }
    return design;
  }

  const std::size_t num_sizes = d / 2;        // sizes 1..floor(d/2); larger ones are complements
  const std::size_t num_paired = (d - 1) / 2;  // sizes whose complement has a different size
  std::vector<double> size_mass(num_sizes);
  for (std::size_t k = 1; k <= num_sizes; ++k) {
    size_mass[k - 1] = static_cast<double>(d - 1) / static_cast<double>(k * (d - k));
    if (k <= num_paired) size_mass[k - 1] *= 2.0;
  }
  double mass_total = 0.0;
  for (double v : size_mass) mass_total += v;
  for (double& v : size_mass) v /= mass_total;

  std::map<std::uint64_t, std::size_t> index_of;
  auto add = [&](std::uint64_t mask, double w) {
    const auto [it, inserted] = index_of.emplace(mask, design.masks.size());
    if (inserted) {
      design.masks.push_back(mask);
      design.weights.push_back(w);
    } else {
      design.weights[it->second] += w;
    }
    return inserted;
  };
  const std::uint64_t full_mask = (std::uint64_t{1} << d) - 1;

  auto remaining = size_mass;
  double left = static_cast<double>(budget);
  std::size_t full_sizes = 0;
  for (std::size_t k = 1; k <= num_sizes; ++k) {
    const bool paired = k <= num_paired;
    const double count = detail::binomial(d, k) * (paired ? 2.0 : 1.0);
    if (left * remaining[k - 1] / count < 1.0 - 1e-8) break;
    ++full_sizes;
    left -= count;
    if (remaining[k - 1] < 1.0) {
      const double scale = 1.0 - remaining[k - 1];
      for (double& v : remaining) v /= scale;
    }
    const double w = size_mass[k - 1] / count;
    // Gosper's hack: every d-bit mask with k bits set, in increasing order.
    for (std::uint64_t m = (std::uint64_t{1} << k) - 1; m <= full_mask;) {
      add(m, w);
      if (paired) add(full_mask ^ m, w);
      const std::uint64_t c = m & (~m + 1);
      const std::uint64_t r = m + c;
      m = (((r ^ m) >> 2) / c) | r;
    }
  }

  const std::size_t fixed = design.masks.size();
  auto samples_left = static_cast<std::size_t>(std::max(0.0, left));
  if (full_sizes < num_sizes && samples_left > 0) {
    std::vector<double> draw(size_mass.begin() + static_cast<std::ptrdiff_t>(full_sizes),
                             size_mass.end());
    for (std::size_t j = 0; j < draw.size(); ++j)
      if (full_sizes + j + 1 <= num_paired) draw[j] /= 2.0;
    double draw_total = 0.0;
    for (double v : draw) draw_total += v;

    std::vector<std::size_t> features(d);
    const std::size_t max_draws = 4 * samples_left;
    for (std::size_t attempt = 0; attempt < max_draws && samples_left > 0; ++attempt) {
      double u = rng.uniform() * draw_total;
      std::size_t j = 0;
      while (j + 1 < draw.size() && u >= draw[j]) u -= draw[j++];
      const std::size_t size = full_sizes + j + 1;
      for (std::size_t i = 0; i < d; ++i) features[i] = i;
      std::uint64_t mask = 0;
      for (std::size_t i = 0; i < size; ++i) {
        const auto pick = i + static_cast<std::size_t>(rng.below(d - i));
        std::swap(features[i], features[pick]);
        mask |= std::uint64_t{1} << features[i];
      }
      if (add(mask, 1.0)) --samples_left;
      if (samples_left > 0 && size <= num_paired) {
        if (add(full_mask ^ mask, 1.0)) --samples_left;
      }
    }
    double mass_left = 0.0;
    for (std::size_t k = full_sizes; k < num_sizes; ++k) mass_left += size_mass[k];
    double sampled = 0.0;
    for (std::size_t i = fixed; i < design.weights.size(); ++i) sampled += design.weights[i];
    for (std::size_t i = fixed; i < design.weights.size(); ++i) {
      design.weights[i] *= mass_left / sampled;
    }
  }
  return design;
}

struct ShapResult {
  Tensor phi;                       // n x d
  std::vector<double> global;       // mean |phi| per feature
  double base_value = 0.0;          // f(background)
  std::vector<double> predictions;  // f(x_k)
  std::size_t n_samples = 0;
  std::size_t n_coalitions = 0;     // per sample, including the empty and full coalitions
  double elapsed_ms = 0.0;
};

template <BatchPredictor F>
ShapResult kernel_shap(const F& f, const Tensor& x_explain, std::span<const double> background,
                       std::size_t n_coalitions, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t d = x_explain.cols();
  const std::size_t n = x_explain.rows();
  detail::check_background(d, background);
  if (d == 0 || n == 0) throw ContractError("kernel_shap: nothing to explain");
  if (n_coalitions < d + 2) {
    throw ContractError("kernel_shap: need at least d + 2 = " + std::to_string(d + 2) +
                        " coalitions, got " + std::to_string(n_coalitions));
  }
  const std::size_t budget = n_coalitions - 2;

  ShapResult result;
  result.phi = Tensor(n, d);
  result.n_samples = n;
  result.base_value = f(Tensor::row_vector(background)).at(0);
  result.predictions = f(x_explain);

  const bool complete = enumerates_all(d, budget);
  CoalitionDesign shared;
  if (complete) {
    Rng unused(seed);
    shared = design_coalitions(d, budget, unused);
  }

  for (std::size_t k = 0; k < n; ++k) {
    const auto x = x_explain.row(k);
    const double delta = result.predictions[k] - result.base_value;
    auto phi = result.phi.row(k);
    if (d == 1) {
      phi[0] = delta;
      continue;
    }
    Rng rng(seed, k + 1);
    const CoalitionDesign design = complete ? shared : design_coalitions(d, budget, rng);
    const std::vector<double> value = f(detail::coalition_inputs(design.masks, x, background));
    const std::size_t rows = design.masks.size();
    const std::size_t last = d - 1;
    Eigen::MatrixXd a(rows, last);
    Eigen::VectorXd b(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const double sw = std::sqrt(design.weights[r]);
      const double z_last = static_cast<double>((design.masks[r] >> last) & 1U);
      for (std::size_t i = 0; i < last; ++i) {
        const double z = static_cast<double>((design.masks[r] >> i) & 1U);
        a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = sw * (z - z_last);
      }
      b(static_cast<Eigen::Index>(r)) = sw * (value[r] - result.base_value - z_last * delta);
    }
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    if (qr.rank() < static_cast<Eigen::Index>(last)) {
      throw NumericError("kernel_shap: singular coalition regression for sample " +
                         std::to_string(k) + "; raise n-coalitions");
    }
    const Eigen::VectorXd sol = qr.solve(b);
    double partial = 0.0;
    for (std::size_t i = 0; i < last; ++i) {
      phi[i] = sol(static_cast<Eigen::Index>(i));
      partial += phi[i];
    }
    phi[last] = delta - partial;
    result.n_coalitions = rows + 2;
  }
  if (d == 1) result.n_coalitions = 2;

  result.global.assign(d, 0.0);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < d; ++i) result.global[i] += std::abs(result.phi(k, i));
  for (double& g : result.global) g /= static_cast<double>(n);
  result.elapsed_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return result;
}

inline Ranking global_importance(const ShapResult& shap) {
  return Ranking::from_values(shap.global, RankingSource::shap);
}

inline Ranking ground_truth_ranking(std::span<const double> importance) {
  return Ranking::from_values(std::vector<double>(importance.begin(), importance.end()),
                              RankingSource::ground_truth);
}

// Indices of features with positive ground-truth importance.
inline std::vector<std::size_t> relevant_features(std::span<const double> importance) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < importance.size(); ++i)
    if (importance[i] > 0.0) out.push_back(i);
  return out;
}

// Spearman rho = 1 - 6 sum d^2 / (m (m^2 - 1)), computed over `features`
// (all features when empty) after re-ranking each ordering within that subset.
inline double spearman(const Ranking& a, const Ranking& b,
                       std::span<const std::size_t> features = {}) {
  if (a.size() != b.size()) {
    throw DimensionError("spearman: rankings cover " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()) + " features");
  }
  std::vector<std::size_t> subset(features.begin(), features.end());
  if (subset.empty()) {
    subset.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) subset[i] = i;
  }
  const std::size_t m = subset.size();
  if (m < 2) throw ContractError("spearman: need at least two features");
  for (std::size_t f : subset)
    if (f >= a.size()) throw DimensionError("spearman: feature index out of range");

  auto ranks_within = [&](const Ranking& r) {
    const auto pos = r.positions();
    std::vector<std::size_t> idx(m);
    for (std::size_t i = 0; i < m; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t x, std::size_t y) { return pos[subset[x]] < pos[subset[y]]; });
    std::vector<double> rank(m);
    for (std::size_t k = 0; k < m; ++k) rank[idx[k]] = static_cast<double>(k);
    return rank;
  };
  const auto ra = ranks_within(a);
  const auto rb = ranks_within(b);
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < m; ++i) sum_sq += (ra[i] - rb[i]) * (ra[i] - rb[i]);
  const auto md = static_cast<double>(m);
  return 1.0 - 6.0 * sum_sq / (md * (md * md - 1.0));
}

struct RankMatch {
  std::size_t position = 0;
  std::size_t truth = 0;
  std::size_t ours = 0;
  std::size_t shap = 0;
  bool ours_matches = false;
  bool shap_matches = false;
};

// One record per ground-truth position among the top k.
inline std::vector<RankMatch> rank_match_table(const Ranking& ours, const Ranking& shap,
                                               const Ranking& truth, std::size_t top_k) {
  if (ours.size() != truth.size() || shap.size() != truth.size()) {
    throw DimensionError("rank_match_table: rankings differ in feature count");
  }
  if (top_k > truth.size()) throw ContractError("rank_match_table: top_k exceeds feature count");
  std::vector<RankMatch> table;
  for (std::size_t p = 0; p < top_k; ++p) {
    RankMatch row{p, truth.order[p], ours.order[p], shap.order[p], false, false};
    row.ours_matches = row.ours == row.truth;
    row.shap_matches = row.shap == row.truth;
    table.push_back(row);
  }
  return table;
}

// Population variance of each feature's rank position across runs.
inline std::vector<double> rank_stability(std::span<const Ranking> rankings) {
  if (rankings.size() < 2) throw ContractError("rank_stability: need at least two rankings");
  const std::size_t d = rankings.front().size();
  std::vector<double> mean(d, 0.0);
  std::vector<double> sq(d, 0.0);
  for (const auto& r : rankings) {
    if (r.size() != d) throw DimensionError("rank_stability: rankings differ in feature count");
    const auto pos = r.positions();
    for (std::size_t i = 0; i < d; ++i) {
      mean[i] += static_cast<double>(pos[i]);
      sq[i] += static_cast<double>(pos[i]) * static_cast<double>(pos[i]);
    }
  }
  const auto n = static_cast<double>(rankings.size());
  std::vector<double> var(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double mu = mean[i] / n;
    var[i] = std::max(0.0, sq[i] / n - mu * mu);
  }
  return var;
}

inline double mean_of(std::span<const double> v) {
  double total = 0.0;
  for (double x : v) total += x;
  return v.empty() ? 0.0 : total / static_cast<double>(v.size());
}

inline void to_json(nlohmann::json& j, const ShapResult& s) {
  j = nlohmann::json{{"phi", tensor_to_json(s.phi)},
                     {"global", s.global},
                     {"base_value", s.base_value},
                     {"predictions", s.predictions},
                     {"n_samples", s.n_samples},
                     {"n_coalitions", s.n_coalitions},
                     {"timing", {{"elapsed_ms", s.elapsed_ms}}}};
}

inline void from_json(const nlohmann::json& j, ShapResult& s) {
  s.phi = tensor_from_json(j.at("phi"));
  s.global = j.at("global").get<std::vector<double>>();
  s.base_value = j.at("base_value").get<double>();
  s.predictions = j.at("predictions").get<std::vector<double>>();
  s.n_samples = j.at("n_samples").get<std::size_t>();
  s.n_coalitions = j.at("n_coalitions").get<std::size_t>();
  s.elapsed_ms = j.at("timing").at("elapsed_ms").get<double>();
}

inline void to_json(nlohmann::json& j, const RankMatch& m) {
  j = nlohmann::json{{"position", m.position},       {"truth", m.truth},
                     {"ours", m.ours},               {"shap", m.shap},
                     {"ours_matches", m.ours_matches}, {"shap_matches", m.shap_matches}};
}

}  // namespace scoregate
