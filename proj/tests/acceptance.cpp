// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "scoregate_cli.hpp"

using namespace scoregate;
using Clock = std::chrono::steady_clock;

namespace {

const std::vector<std::size_t> kExpectedTop{4, 1, 0, 2, 3};

struct Outcome {
  bool pass = false;
  std::string detail;
  nlohmann::json result;  // compared across reruns
};

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

std::string join(const std::vector<double>& v) {
  std::ostringstream s;
  s << "[";
  for (std::size_t i = 0; i < v.size(); ++i) s << (i ? ", " : "") << v[i];
  s << "]";
  return s.str();
}

std::string one_based(const std::vector<std::size_t>& order, std::size_t n) {
  std::ostringstream s;
  s << "[";
  for (std::size_t i = 0; i < std::min(n, order.size()); ++i) s << (i ? "," : "") << order[i] + 1;
  s << "]";
  return s.str();
}

bool top_matches(const Ranking& r) {
  return std::equal(kExpectedTop.begin(), kExpectedTop.end(), r.order.begin());
}

nlohmann::json without_timing(nlohmann::json j) {
  if (j.is_object()) {
    j.erase("timing");
    for (auto& [key, value] : j.items()) value = without_timing(value);
  } else if (j.is_array()) {
    for (auto& value : j) value = without_timing(value);
  }
  return j;
}

// Trained runs shared between criteria; cleared before the determinism rerun.
struct RunKey {
  std::size_t noise;
  std::uint64_t data_seed;
  std::uint64_t seed;
  bool gated;
  std::string init;
  auto operator<=>(const RunKey&) const = default;
};

std::map<RunKey, cli::TrainedRun> g_runs;

const cli::TrainedRun& trained(const RunKey& key) {
  auto it = g_runs.find(key);
  if (it != g_runs.end()) return it->second;
  const Dataset ds = gen_synthetic(1000, key.noise, key.data_seed);
  cli::ModelOptions opts;
  opts.init = key.init;
  const auto [mc, tc] = cli::resolve_configs(opts, ds, key.gated, key.seed);
  return g_runs.emplace(key, cli::train_run(ds, mc, tc)).first->second;
}

// ---- 1 ---------------------------------------------------------------------

Outcome gradient_fidelity() {
  const auto start = Clock::now();
  Rng rng(1);
  double worst_autodiff = 0.0;
  double worst_fd = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d = 1 + rng.below(8);
    const std::size_t units = 1 + rng.below(4);
    Tensor w(d, units);
    for (double& v : w.data()) v = rng.uniform(-1, 1);
    std::vector<double> s(d), x(d);
    for (double& v : s) v = rng.uniform(-2, 2);
    for (double& v : x) v = rng.uniform(-3, 3);
    const auto g = analytic_grads(w, s, x);

    auto y = [&](const std::vector<double>& sv, const Tensor& wv, std::size_t k) {
      const auto wt = scores_to_weights(sv);
      double acc = 0.0;
      for (std::size_t i = 0; i < d; ++i) acc += wv(i, k) * wt[i] * x[i];
      return acc;
    };
    for (std::size_t k = 0; k < units; ++k) {
      autodiff::Graph graph;
      const auto sv = graph.leaf(Tensor::row_vector(s));
      const auto wv = graph.leaf(w);
      Tensor pick(units, 1);
      pick[k] = 1.0;
      const auto out = graph.matmul(
          graph.matmul(graph.hadamard(graph.leaf(Tensor::row_vector(x), false), graph.softmax_rows(sv)), wv),
          graph.leaf(pick, false));
      graph.backward(out);
      const double eps = 1e-5;
      for (std::size_t l = 0; l < d; ++l) {
        worst_autodiff = std::max(worst_autodiff, rel_err(g.d_scores(k, l), graph.grad(sv)[l]));
        worst_autodiff = std::max(worst_autodiff, rel_err(g.d_weight(l, k), graph.grad(wv)(l, k)));
        auto up = s;
        auto down = s;
        up[l] += eps;
        down[l] -= eps;
        worst_fd = std::max(worst_fd, rel_err(g.d_scores(k, l), (y(up, w, k) - y(down, w, k)) / (2 * eps)));
        Tensor wu = w;
        Tensor wd = w;
        wu(l, k) += eps;
        wd(l, k) -= eps;
        worst_fd = std::max(worst_fd, rel_err(g.d_weight(l, k), (y(s, wu, k) - y(s, wd, k)) / (2 * eps)));
      }
    }
  }
  const double secs = seconds_since(start);
  std::ostringstream detail;
  detail << "max rel err vs autodiff " << worst_autodiff << ", vs finite differences " << worst_fd << ", "
         << secs << " s";
  return {worst_autodiff <= 1e-6 && worst_fd <= 1e-4 && secs < 10.0, detail.str(), {}};
}

// ---- 2 ---------------------------------------------------------------------

Outcome shapley_oracle() {
  const auto start = Clock::now();
  Rng rng(2);
  double worst_gap = 0.0;
  double worst_efficiency = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 2 + rng.below(9);
    ModelConfig cfg;
    cfg.input_dim = d;
    cfg.hidden_widths = {8, 4};
    if (trial % 5 == 4) {
      cfg.backbone = Backbone::attention;
      cfg.model_dim = 4;
      cfg.ffn_dim = 8;
      cfg.hidden_widths = {4};
    }
    Model model = build_model(cfg, 1000 + trial);
    for (double& v : model.scores->scores) v = rng.uniform(-2, 2);
    Tensor x(3, d);
    for (double& v : x.data()) v = rng.uniform(-1, 1);
    std::vector<double> bg(d);
    for (double& v : bg) v = rng.uniform(-1, 1);
    const auto f = predictor(model);
    const auto kernel = kernel_shap(f, x, bg, std::size_t{1} << d, trial);
    const double f_bg = f(Tensor::row_vector(bg))[0];
    const auto fx = f(x);
    for (std::size_t k = 0; k < x.rows(); ++k) {
      const auto exact = exact_shapley(f, x.row(k), bg);
      double sum_exact = 0.0;
      double sum_kernel = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        worst_gap = std::max(worst_gap, std::abs(exact[i] - kernel.phi(k, i)));
        sum_exact += exact[i];
        sum_kernel += kernel.phi(k, i);
      }
      worst_efficiency = std::max({worst_efficiency, std::abs(sum_exact - (fx[k] - f_bg)),
                                   std::abs(sum_kernel - (fx[k] - f_bg))});
    }
  }
  const double secs = seconds_since(start);
  std::ostringstream detail;
  detail << "max |kernel - exact| " << worst_gap << ", max efficiency gap " << worst_efficiency << ", "
         << secs << " s";
  return {worst_gap <= 1e-8 && worst_efficiency <= 1e-10 && secs < 60.0, detail.str(), {}};
}

// ---- 3 ---------------------------------------------------------------------

Outcome synthetic_recovery() {
  const auto start = Clock::now();
  bool ok = true;
  nlohmann::json result = nlohmann::json::array();
  std::ostringstream detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto& run = trained({5, seed, seed, true, "zero"});
    const Ranking r = extract_ranking(*run.model.scores);
    const auto gt = run.train.ground_truth_importance().value();
    const double rho = spearman(r, ground_truth_ranking(gt), relevant_features(gt));
    ok = ok && top_matches(r) && rho == 1.0;
    detail << (seed ? " " : "") << "seed " << seed << " " << one_based(r.order, 5) << " rho " << rho << ";";
    result.push_back({{"seed", seed}, {"ranking", r}, {"rho", rho}});
  }
  const double secs = seconds_since(start);
  detail << " " << secs << " s";
  return {ok && secs < 300.0, detail.str(), result};
}

// ---- 4 ---------------------------------------------------------------------

Outcome init_invariance() {
  const auto start = Clock::now();
  std::vector<std::pair<std::string, RunKey>> variants{
      {"zero", {5, 0, 0, true, "zero"}},     {"random/0", {5, 0, 0, true, "random"}},
      {"random/1", {5, 0, 1, true, "random"}}, {"random/2", {5, 0, 2, true, "random"}},
      {"gt", {5, 0, 0, true, "gt"}}};
  nlohmann::json result = nlohmann::json::array();
  std::optional<std::vector<std::size_t>> reference;
  bool ok = true;
  std::ostringstream detail;
  for (const auto& [label, key] : variants) {
    const Ranking r = extract_ranking(*trained(key).model.scores);
    if (!reference) reference = r.order;
    ok = ok && r.order == *reference;
    detail << label << " " << one_based(r.order, r.order.size()) << "; ";
    result.push_back({{"init", label}, {"ranking", r}});
  }
  const double secs = seconds_since(start);
  detail << secs << " s";
  return {ok && secs < 300.0, detail.str(), result};
}

// ---- 5 ---------------------------------------------------------------------

Outcome irrelevant_suppression() {
  bool ok = true;
  nlohmann::json result = nlohmann::json::array();
  std::ostringstream detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto& run = trained({11, seed, seed, true, "zero"});
    const auto w = weights(*run.model.scores);
    const Ranking r = Ranking::from_values(w, RankingSource::scores);
    double max_noise = 0.0;
    for (std::size_t i = 5; i < 16; ++i) max_noise = std::max(max_noise, w[i]);
    bool relevant_first = true;
    for (std::size_t p = 0; p < 5; ++p) relevant_first = relevant_first && r.order[p] < 5;
    ok = ok && max_noise < 1.0 / 16.0 && relevant_first;
    detail << "seed " << seed << " max noise weight " << max_noise << (relevant_first ? "" : " (noise in top 5)")
           << "; ";
    result.push_back({{"seed", seed}, {"weights", w}});
  }
  detail << "bound " << 1.0 / 16.0;
  return {ok, detail.str(), result};
}

// ---- 6 ---------------------------------------------------------------------

Outcome accuracy_direction() {
  bool ok = true;
  nlohmann::json result = nlohmann::json::array();
  std::ostringstream detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto& gated = trained({11, seed, seed, true, "zero"}).report;
    const auto& vanilla = trained({11, seed, seed, false, "zero"}).report;
    const double gap = gated.test_accuracy - vanilla.test_accuracy;
    ok = ok && gap >= 0.05 && gated.final_train_loss < vanilla.final_train_loss;
    detail << "seed " << seed << " acc " << gated.test_accuracy << " vs " << vanilla.test_accuracy
           << ", loss " << gated.final_train_loss << " vs " << vanilla.final_train_loss << "; ";
    result.push_back({{"seed", seed},
                      {"gated_accuracy", gated.test_accuracy},
                      {"vanilla_accuracy", vanilla.test_accuracy},
                      {"gated_loss", gated.final_train_loss},
                      {"vanilla_loss", vanilla.final_train_loss}});
  }
  detail << "need gap >= 0.05 and lower gated loss";
  return {ok, detail.str(), result};
}

// ---- 7 ---------------------------------------------------------------------

Outcome explanation_speed() {
  const auto dir = std::filesystem::temp_directory_path() / "scoregate_acceptance_speed";
  std::filesystem::remove_all(dir);
  const auto p = [&](const char* name) { return (dir / name).string(); };
  std::ostringstream sink;
  const std::vector<std::vector<std::string>> steps{
      {"gen", "--dataset", "synth", "--n", "1000", "--noise", "11", "--seed", "7", "--out", p("n16.csv")},
      {"train", "--data", p("n16.csv"), "--seed", "7", "--out-model", p("model.json"), "--out-report",
       p("report.json")},
      {"rank", "--model", p("model.json"), "--out", p("rank.json")},
      {"shap", "--model", p("model.json"), "--data", p("n16.csv"), "--samples", "100", "--coalitions", "2048",
       "--out", p("shap.json")}};
  for (const auto& args : steps) {
    if (cli::run(args, sink, sink) != cli::kExitOk) return {false, "cli step failed: " + sink.str(), {}};
  }
  const auto rank = cli::read_json(p("rank.json"));
  const auto shap = cli::read_json(p("shap.json"));
  const double rank_ms = rank.at("timing").at("elapsed_ms").get<double>();
  const double shap_ms = shap.at("timing").at("elapsed_ms").get<double>();
  const double ratio = shap_ms / std::max(rank_ms, 1e-9);
  std::ostringstream detail;
  detail << "rank " << rank_ms << " ms, shap " << shap_ms << " ms, ratio " << ratio;
  const nlohmann::json result{{"rank", without_timing(rank)}, {"shap", without_timing(shap)}};
  return {ratio >= 100.0, detail.str(), result};
}

// ---- 8 ---------------------------------------------------------------------

Outcome stability() {
  const Dataset ds = gen_synthetic(1000, 5, 0);
  const auto s = cli::run_stability(ds, cli::ModelOptions{}, 5, 0, 100, 2048);
  const auto j = cli::to_json(s);
  const double scores_mean = j.at("scores_mean_variance").get<double>();
  const double shap_mean = j.at("shap_mean_variance").get<double>();
  std::ostringstream detail;
  detail << "mean rank variance scores " << scores_mean << " vs shap " << shap_mean << "; scores "
         << join(s.scores_variance) << "; shap " << join(s.shap_variance);
  return {scores_mean <= shap_mean, detail.str(), j};
}

// ---- 9 ---------------------------------------------------------------------

Outcome shap_agreement() {
  bool ok = true;
  std::ostringstream detail;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto& run = trained({5, seed, seed, true, "zero"});
    const Ranking r = global_importance(cli::explain_model(run.model, run.train, run.test, 100, 2048, seed));
    ok = ok && top_matches(r);
    detail << "seed " << seed << " " << one_based(r.order, 5) << "; ";
  }
  detail << "expected " << one_based(kExpectedTop, 5);
  return {ok, detail.str(), {}};
}

}  // namespace

int main() {
  bool all = true;
  auto report = [&](int id, const char* name, const Outcome& o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << o.detail
              << std::endl;
    all = all && o.pass;
  };
  auto guarded = [](const std::function<Outcome()>& fn) {
    try {
      return fn();
    } catch (const std::exception& e) {
      return Outcome{false, std::string("error: ") + e.what(), {}};
    }
  };

  const std::vector<std::pair<const char*, std::function<Outcome()>>> repeatable{
      {"synthetic ranking recovery", synthetic_recovery},
      {"initialization invariance", init_invariance},
      {"irrelevant-feature suppression", irrelevant_suppression},
      {"accuracy direction", accuracy_direction},
      {"explanation speed", explanation_speed},
      {"stability", stability}};

  report(1, "gradient fidelity", guarded(gradient_fidelity));
  report(2, "Shapley oracle equivalence", guarded(shapley_oracle));
  std::vector<nlohmann::json> first;
  for (std::size_t i = 0; i < repeatable.size(); ++i) {
    const auto o = guarded(repeatable[i].second);
    first.push_back(o.result);
    report(static_cast<int>(i) + 3, repeatable[i].first, o);
  }
  report(9, "SHAP agreement", guarded(shap_agreement));

  g_runs.clear();
  bool identical = true;
  std::ostringstream detail;
  for (std::size_t i = 0; i < repeatable.size(); ++i) {
    const auto again = guarded(repeatable[i].second);
    const bool same = !first[i].is_null() && again.result.dump() == first[i].dump();
    identical = identical && same;
    detail << (i ? ", " : "") << i + 3 << (same ? " identical" : " differs");
  }
  report(10, "determinism", {identical, detail.str(), {}});
  return all ? 0 : 1;
}
