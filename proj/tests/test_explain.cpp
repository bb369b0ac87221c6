#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "scoregate/explain.hpp"
#include "scoregate/models.hpp"
#include "test_util.hpp"

using namespace scoregate;
using scoregate::testing::random_tensor;

namespace {

// f(x) = sum_i a_i x_i + b
struct Linear {
  std::vector<double> a;
  double b = 0.0;
  std::vector<double> operator()(const Tensor& x) const {
    std::vector<double> out(x.rows(), b);
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t i = 0; i < a.size(); ++i) out[r] += a[i] * x(r, i);
    return out;
  }
};

struct Constant {
  double c = 0.3;
  std::vector<double> operator()(const Tensor& x) const { return std::vector<double>(x.rows(), c); }
};

ModelConfig small_mlp(std::size_t d) {
  ModelConfig c;
  c.input_dim = d;
  c.hidden_widths = {6, 4};
  return c;
}

Model random_model(std::size_t d, std::uint64_t seed) {
  auto m = build_model(small_mlp(d), seed);
  Rng rng(seed, 99);
  m.scores->scores = random_tensor(1, d, rng, -2, 2).values();
  return m;
}

}  // namespace

TEST(ExactShapley, LinearModel) {
  const Linear f{{2.0, 1.0}, 0.0};
  const auto phi = exact_shapley(f, std::vector<double>{1, 1}, std::vector<double>{0, 0});
  EXPECT_NEAR(phi[0], 2.0, 1e-15);
  EXPECT_NEAR(phi[1], 1.0, 1e-15);
}

TEST(ExactShapley, LinearClosedForm) {
  Rng rng(1);
  const auto a = random_tensor(1, 7, rng).values();
  const Linear f{a, 0.4};
  const auto x = random_tensor(1, 7, rng).values();
  const auto bg = random_tensor(1, 7, rng).values();
  const auto phi = exact_shapley(f, x, bg);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(phi[i], a[i] * (x[i] - bg[i]), 1e-13);
}

TEST(ExactShapley, ConstantAndSymmetry) {
  const auto zero = exact_shapley(Constant{}, std::vector<double>{1, 2, 3}, std::vector<double>{0, 0, 0});
  for (double v : zero) EXPECT_EQ(v, 0.0);
  const Linear sym{{1.0, 1.0}, 0.0};
  const auto phi = exact_shapley(sym, std::vector<double>{0.7, 0.7}, std::vector<double>{0, 0});
  EXPECT_EQ(phi[0], phi[1]);
}

TEST(ExactShapley, EfficiencyOnModels) {
  Rng rng(2);
  for (std::size_t d : {2u, 5u, 9u}) {
    const auto m = random_model(d, d);
    const auto x = random_tensor(1, d, rng).values();
    const auto bg = random_tensor(1, d, rng).values();
    const auto phi = exact_shapley(predictor(m), x, bg);
    const double fx = predict(m, Tensor::row_vector(x))[0];
    const double fb = predict(m, Tensor::row_vector(bg))[0];
    EXPECT_NEAR(std::accumulate(phi.begin(), phi.end(), 0.0), fx - fb, 1e-10);
  }
}

TEST(ExactShapley, DummyFeatureGetsZero) {
  Rng rng(3);
  auto m = random_model(4, 4);
  m.scores->scores = {0.0, -800.0, 0.3, 0.1};
  const auto phi = exact_shapley(predictor(m), random_tensor(1, 4, rng).values(),
                                 random_tensor(1, 4, rng).values());
  EXPECT_EQ(phi[1], 0.0);
}

TEST(ExactShapley, Errors) {
  const Linear f{std::vector<double>(16, 1.0), 0.0};
  EXPECT_THROW(exact_shapley(f, std::vector<double>(16, 1.0), std::vector<double>(16, 0.0)),
               ContractError);
  EXPECT_THROW(exact_shapley(f, std::vector<double>(3, 1.0), std::vector<double>(2, 0.0)),
               DimensionError);
}

TEST(CoalitionDesign, CompleteDesignCoversAllProperSubsets) {
  Rng rng(4);
  const auto design = design_coalitions(5, 30, rng);
  EXPECT_EQ(design.masks.size(), 30u);
  std::set<std::uint64_t> unique(design.masks.begin(), design.masks.end());
  EXPECT_EQ(unique.size(), 30u);
  EXPECT_EQ(unique.count(0), 0u);
  EXPECT_EQ(unique.count(31), 0u);
  EXPECT_NEAR(design.weights[0], shapley_kernel(5, 1), 1e-15);
}

TEST(CoalitionDesign, SampledDesignIsDistinctAndWithinBudget) {
  Rng rng(5);
  const auto design = design_coalitions(12, 300, rng);
  EXPECT_LE(design.masks.size(), 300u);
  EXPECT_GT(design.masks.size(), 250u);
  std::set<std::uint64_t> unique(design.masks.begin(), design.masks.end());
  EXPECT_EQ(unique.size(), design.masks.size());
  // size-1 and size-11 coalitions (24 of them) are always enumerated
  std::size_t singles = 0;
  for (auto m : design.masks) {
    const int k = std::popcount(m);
    singles += k == 1 || k == 11;
    EXPECT_GT(k, 0);
    EXPECT_LT(k, 12);
  }
  EXPECT_EQ(singles, 24u);
  for (double w : design.weights) EXPECT_GT(w, 0.0);
}

TEST(KernelShap, FullEnumerationMatchesExactOnLinear) {
  Rng rng(6);
  const Linear f{random_tensor(1, 5, rng).values(), 0.1};
  const auto x = random_tensor(3, 5, rng);
  const auto bg = random_tensor(1, 5, rng).values();
  const auto result = kernel_shap(f, x, bg, 32, 0);
  EXPECT_EQ(result.n_coalitions, 32u);
  for (std::size_t k = 0; k < 3; ++k) {
    const auto exact = exact_shapley(f, x.row(k), bg);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(result.phi(k, i), exact[i], 1e-8);
  }
}

TEST(KernelShap, FullEnumerationMatchesExactOnRandomModels) {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t d = 2 + static_cast<std::size_t>(rng.below(9));
    const auto m = random_model(d, 100 + trial);
    const auto x = random_tensor(2, d, rng);
    const auto bg = random_tensor(1, d, rng).values();
    const auto result = kernel_shap(predictor(m), x, bg, std::size_t{1} << d, 3);
    for (std::size_t k = 0; k < 2; ++k) {
      const auto exact = exact_shapley(predictor(m), x.row(k), bg);
      for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(result.phi(k, i), exact[i], 1e-8);
    }
  }
}

TEST(KernelShap, LocalAccuracyAndGlobal) {
  Rng rng(8);
  const auto m = random_model(12, 8);
  const auto x = random_tensor(4, 12, rng);
  const auto bg = random_tensor(1, 12, rng).values();
  const auto result = kernel_shap(predictor(m), x, bg, 500, 1);
  ASSERT_EQ(result.n_samples, 4u);
  for (std::size_t k = 0; k < 4; ++k) {
    double sum = result.base_value;
    for (std::size_t i = 0; i < 12; ++i) sum += result.phi(k, i);
    EXPECT_NEAR(sum, result.predictions[k], 1e-10);
  }
  for (std::size_t i = 0; i < 12; ++i) {
    double mean = 0.0;
    for (std::size_t k = 0; k < 4; ++k) mean += std::abs(result.phi(k, i));
    EXPECT_NEAR(result.global[i], mean / 4.0, 1e-12);
  }
}

TEST(KernelShap, SampledTopFiveMatchesExactAtD10) {
  Rng rng(9);
  auto m = random_model(10, 9);
  m.scores->scores = {2.0, -1.0, 1.5, -2.0, 1.0, 0.0, 1.8, -0.5, -1.5, 0.8};
  const auto x = random_tensor(10, 10, rng);
  const auto bg = std::vector<double>(10, 0.0);
  // d = 10 with 1000 coalitions is below 2^10, so the design is sampled.
  const auto sampled = kernel_shap(predictor(m), x, bg, 1000, 2);
  std::vector<double> exact_global(10, 0.0);
  for (std::size_t k = 0; k < 10; ++k) {
    const auto phi = exact_shapley(predictor(m), x.row(k), bg);
    for (std::size_t i = 0; i < 10; ++i) exact_global[i] += std::abs(phi[i]) / 10.0;
  }
  const auto a = global_importance(sampled).order;
  const auto b = Ranking::from_values(exact_global, RankingSource::shap).order;
  EXPECT_EQ(std::set<std::size_t>(a.begin(), a.begin() + 5), std::set<std::size_t>(b.begin(), b.begin() + 5));
}

TEST(KernelShap, ConstantModelGivesZero) {
  Rng rng(10);
  const auto result = kernel_shap(Constant{}, random_tensor(3, 6, rng), std::vector<double>(6, 0.0), 40, 0);
  for (double v : result.phi.data()) EXPECT_NEAR(v, 0.0, 1e-14);
}

TEST(KernelShap, DeterministicForSeed) {
  Rng rng(11);
  const auto m = random_model(14, 11);
  const auto x = random_tensor(3, 14, rng);
  const auto bg = random_tensor(1, 14, rng).values();
  const auto a = kernel_shap(predictor(m), x, bg, 200, 5);
  const auto b = kernel_shap(predictor(m), x, bg, 200, 5);
  EXPECT_EQ(a.phi, b.phi);
  const auto c = kernel_shap(predictor(m), x, bg, 200, 6);
  EXPECT_NE(a.phi, c.phi);
}

TEST(KernelShap, Errors) {
  Rng rng(12);
  const Linear f{std::vector<double>(6, 1.0), 0.0};
  EXPECT_THROW(kernel_shap(f, random_tensor(2, 6, rng), std::vector<double>(6, 0.0), 7, 0),
               ContractError);
  EXPECT_THROW(kernel_shap(f, random_tensor(2, 6, rng), std::vector<double>(5, 0.0), 64, 0),
               DimensionError);
}

TEST(GlobalImportance, Examples) {
  ShapResult one;
  one.phi = Tensor{{0.1, -0.9, 0.4}};
  one.global = {0.1, 0.9, 0.4};
  EXPECT_EQ(global_importance(one).order, (std::vector<std::size_t>{1, 2, 0}));
  EXPECT_EQ(global_importance(one).source, RankingSource::shap);
}

TEST(GlobalImportance, AbsoluteValuePreventsCancellation) {
  const Linear f{{1.0, 0.0}, 0.0};
  const Tensor x{{1.0, 0.0}, {-1.0, 0.0}};
  const auto result = kernel_shap(f, x, std::vector<double>{0, 0}, 4, 0);
  EXPECT_NEAR(result.global[0], 1.0, 1e-12);
  EXPECT_NEAR(result.global[1], 0.0, 1e-12);
  EXPECT_EQ(global_importance(result).order.front(), 0u);
}

TEST(GlobalImportance, InvariantToSampleOrder) {
  Rng rng(13);
  const auto m = random_model(5, 13);
  const auto x = random_tensor(6, 5, rng);
  Tensor reversed(6, 5);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 5; ++c) reversed(r, c) = x(5 - r, c);
  const auto bg = std::vector<double>(5, 0.0);
  const auto a = kernel_shap(predictor(m), x, bg, 32, 0);
  const auto b = kernel_shap(predictor(m), reversed, bg, 32, 0);
  EXPECT_EQ(global_importance(a).order, global_importance(b).order);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(a.global[i], b.global[i], 1e-14);
}

TEST(Spearman, Examples) {
  const auto a = Ranking::from_values({5, 4, 3, 2, 1}, RankingSource::scores);
  EXPECT_EQ(spearman(a, a), 1.0);
  const auto rev = Ranking::from_values({1, 2, 3, 4, 5}, RankingSource::scores);
  EXPECT_EQ(spearman(a, rev), -1.0);
  const auto swap = Ranking::from_values({4, 5, 3, 2, 1}, RankingSource::scores);
  EXPECT_NEAR(spearman(a, swap), 0.9, 1e-15);
}

TEST(Spearman, SubsetAndErrors) {
  const auto gt = ground_truth_ranking(std::vector<double>{0.2, 0.3, 0.1, 0, 0});
  const auto ours = Ranking::from_values({0.25, 0.35, 0.15, 0.2, 0.05}, RankingSource::scores);
  const auto relevant = relevant_features(std::vector<double>{0.2, 0.3, 0.1, 0, 0});
  EXPECT_EQ(relevant, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(spearman(ours, gt, relevant), 1.0);
  EXPECT_LT(spearman(ours, gt), 1.0);
  const std::vector<std::size_t> single{0};
  EXPECT_THROW(spearman(ours, gt, single), ContractError);
  EXPECT_THROW(spearman(ours, Ranking::from_values({1, 2}, RankingSource::shap)), DimensionError);
}

TEST(RankMatchTable, Examples) {
  const auto gt = Ranking::from_values({0.2, 0.3, 0.1, 0.05, 0.5}, RankingSource::ground_truth);
  const auto table = rank_match_table(gt, gt, gt, 5);
  ASSERT_EQ(table.size(), 5u);
  for (const auto& row : table) {
    EXPECT_TRUE(row.ours_matches);
    EXPECT_TRUE(row.shap_matches);
  }
  EXPECT_EQ(table[0].truth, 4u);
  const auto other = Ranking::from_values({0.5, 0.05, 0.3, 0.2, 0.1}, RankingSource::scores);
  std::size_t hits = 0;
  for (const auto& row : rank_match_table(other, other, gt, 5)) hits += row.ours_matches + row.shap_matches;
  EXPECT_EQ(hits, 0u);
  EXPECT_THROW(rank_match_table(gt, gt, gt, 6), ContractError);
}

TEST(RankStability, Examples) {
  const auto a = Ranking::from_values({3, 2, 1}, RankingSource::scores);
  const std::vector<Ranking> same{a, a, a};
  for (double v : rank_stability(same)) EXPECT_EQ(v, 0.0);
  const auto b = Ranking::from_values({2, 3, 1}, RankingSource::scores);
  const std::vector<Ranking> swapped{a, b};
  const auto var = rank_stability(swapped);
  EXPECT_EQ(var, (std::vector<double>{0.25, 0.25, 0.0}));
  EXPECT_THROW(rank_stability(std::vector<Ranking>{a}), ContractError);
}

TEST(ShapResultJson, RoundTrip) {
  Rng rng(14);
  const auto m = random_model(4, 14);
  const auto result = kernel_shap(predictor(m), random_tensor(2, 4, rng), std::vector<double>(4, 0), 16, 0);
  const nlohmann::json j = result;
  EXPECT_TRUE(j.at("timing").contains("elapsed_ms"));
  const auto back = j.get<ShapResult>();
  EXPECT_EQ(back.phi, result.phi);
  EXPECT_EQ(back.global, result.global);
  EXPECT_EQ(back.n_coalitions, result.n_coalitions);
}
