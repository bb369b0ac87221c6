#pragma once

// scoregate command-line front end. Every command writes its artifact plus a
// <artifact>.manifest.json holding the exact argument list, so
// `scoregate replay --manifest <file>` reruns it.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "scoregate/scoregate.hpp"

namespace scoregate::cli {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr double kTrainFraction = 0.8;

struct UsageError : Error {
  using Error::Error;
};

inline std::uint64_t parse_seed(const std::string& text) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end) throw UsageError("invalid seed '" + text + "'");
  return v;
}

// SCOREGATE_SEED when set, else 0.
inline std::uint64_t default_seed() {
  const char* env = std::getenv("SCOREGATE_SEED");
  return env && *env ? parse_seed(env) : 0;
}

inline void write_text(const std::string& path, const std::string& text) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline std::string sidecar_path(const std::string& csv_path) {
  return std::filesystem::path(csv_path).replace_extension(".meta.json").string();
}

inline std::string manifest_path(const std::string& artifact) { return artifact + ".manifest.json"; }

struct Manifest {
  std::string command;
  std::vector<std::string> args;
  nlohmann::json params = nlohmann::json::object();
  nlohmann::json seeds = nlohmann::json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
};

inline void write_manifest(const std::string& artifact, const Manifest& m) {
  write_json(manifest_path(artifact), {{"command", m.command},
                                       {"tool_version", kToolVersion},
                                       {"args", m.args},
                                       {"params", m.params},
                                       {"seeds", m.seeds},
                                       {"inputs", m.inputs},
                                       {"outputs", m.outputs}});
}

// Loads a CSV and, when present, its generator sidecar.
inline Dataset load_dataset(const std::string& path) {
  Dataset ds = load_csv(path);
  const auto meta = sidecar_path(path);
  if (std::filesystem::exists(meta)) attach_ground_truth(ds, read_json(meta).get<Sidecar>());
  return ds;
}

inline std::vector<double> column_means(const Tensor& x) {
  std::vector<double> mean(x.cols(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) mean[c] += x(r, c);
  for (double& m : mean) m /= static_cast<double>(std::max<std::size_t>(x.rows(), 1));
  return mean;
}

// Up to k rows drawn without replacement.
inline Tensor sample_rows(const Tensor& x, std::size_t k, std::uint64_t seed) {
  Rng rng(seed, stream_id("explain"));
  const auto perm = rng.permutation(x.rows());
  const std::size_t n = std::min(k, x.rows());
  Tensor out(n, x.cols());
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = x.row(perm[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

// Kernel SHAP on `samples` random test rows against the train-split mean.
inline ShapResult explain_model(const Model& model, const Dataset& train_ds, const Dataset& test_ds,
                                std::size_t samples, std::size_t coalitions, std::uint64_t seed) {
  const auto background = column_means(train_ds.x);
  return kernel_shap(predictor(model), sample_rows(test_ds.x, samples, seed), background,
                     coalitions, seed);
}

struct TrainedRun {
  Model model;
  TrainReport report;
  Dataset train;
  Dataset test;
};

inline TrainedRun train_run(const Dataset& ds, const ModelConfig& mc, const TrainConfig& tc) {
  auto [train_ds, test_ds] = split(ds, kTrainFraction, tc.seed);
  Model model = build_model(mc, tc.seed);
  TrainReport report = train(model, train_ds, test_ds, tc);
  return {std::move(model), std::move(report), std::move(train_ds), std::move(test_ds)};
}

// Options shared by `train` and `stability`.
struct ModelOptions {
  std::string kind = "scores";
  std::string backbone = "mlp";
  std::vector<std::size_t> hidden{32, 16};
  std::size_t gate_layer = 0;
  std::size_t epochs = 1000;
  double lr = 0.001;
  std::string loss;
  std::string init = "zero";
  std::string init_values;
  std::size_t batch_size = 32;
  bool no_standardize = false;
  std::size_t record_every = 10;
  std::string reg = "none";
  double lambda = 0.0;
};

inline void add_model_options(CLI::App* cmd, ModelOptions& o, bool with_kind) {
  if (with_kind) {
    cmd->add_option("--model", o.kind, "vanilla or scores")
        ->check(CLI::IsMember({"vanilla", "scores"}))
        ->capture_default_str();
  }
  cmd->add_option("--backbone", o.backbone)->check(CLI::IsMember({"mlp", "attention"}))
      ->capture_default_str();
  cmd->add_option("--hidden", o.hidden, "hidden widths, comma separated")->delimiter(',')
      ->capture_default_str();
  cmd->add_option("--gate-layer", o.gate_layer)->capture_default_str();
  cmd->add_option("--epochs", o.epochs)->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--lr", o.lr)->check(CLI::NonNegativeNumber)->capture_default_str();
  cmd->add_option("--loss", o.loss, "bce or mse; defaults by task")
      ->check(CLI::IsMember({"bce", "mse"}));
  cmd->add_option("--init", o.init)->check(CLI::IsMember({"zero", "random", "gt"}))
      ->capture_default_str();
  cmd->add_option("--init-values", o.init_values, "sidecar or JSON array of initial scores");
  cmd->add_option("--batch-size", o.batch_size, "0 for full batch")->capture_default_str();
  cmd->add_flag("--no-standardize", o.no_standardize, "feed raw inputs");
  cmd->add_option("--record-every", o.record_every)->check(CLI::PositiveNumber)
      ->capture_default_str();
  cmd->add_option("--reg", o.reg)->check(CLI::IsMember({"none", "entropy", "l1"}))
      ->capture_default_str();
  cmd->add_option("--lambda", o.lambda)->check(CLI::NonNegativeNumber)->capture_default_str();
}

inline std::vector<double> load_init_values(const std::string& path) {
  const auto j = read_json(path);
  if (j.is_array()) return j.get<std::vector<double>>();
  if (j.contains("ground_truth_importance")) {
    return j.at("ground_truth_importance").get<std::vector<double>>();
  }
  throw ParseError(path + ": expected a JSON array or a sidecar");
}

inline std::pair<ModelConfig, TrainConfig> resolve_configs(const ModelOptions& o, const Dataset& ds,
                                                           bool gated, std::uint64_t seed) {
  ModelConfig mc;
  mc.input_dim = ds.cols();
  mc.backbone = backbone_from_string(o.backbone);
  mc.hidden_widths = o.hidden;
  mc.gated = gated;
  mc.gate_layer = o.gate_layer;
  mc.scores_init = scores_init_from_string(o.init);
  if (mc.scores_init == ScoresInit::from_values) {
    if (!o.init_values.empty()) {
      mc.scores_values = load_init_values(o.init_values);
    } else if (auto gt = ds.ground_truth_importance()) {
      mc.scores_values = *gt;
    } else {
      throw ContractError("--init gt needs --init-values or a dataset sidecar");
    }
  }
  if (!gated) {
    mc.scores_init = ScoresInit::zero;
    mc.scores_values.reset();
  }
  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.lr = o.lr;
  tc.loss = o.loss.empty() ? (ds.task == Task::classification ? LossKind::bce : LossKind::mse)
                           : loss_kind_from_string(o.loss);
  tc.seed = seed;
  tc.record_scores_every = o.record_every;
  tc.batch_size = o.batch_size;
  tc.standardize = !o.no_standardize;
  tc.penalty = penalty_kind_from_string(o.reg);
  tc.lambda = o.lambda;
  return {mc, tc};
}

inline nlohmann::json options_json(const ModelOptions& o) {
  return {{"backbone", o.backbone},   {"hidden", o.hidden},         {"gate_layer", o.gate_layer},
          {"epochs", o.epochs},       {"lr", o.lr},                 {"loss", o.loss},
          {"init", o.init},           {"init_values", o.init_values}, {"batch_size", o.batch_size},
          {"standardize", !o.no_standardize}, {"record_every", o.record_every},
          {"reg", o.reg},             {"lambda", o.lambda}};
}

// A ranking from a Ranking file, a train report, or a SHAP result.
inline Ranking load_ranking(const std::string& path) {
  const auto j = read_json(path);
  if (j.contains("order")) return j.get<Ranking>();
  if (j.contains("ranking")) {
    if (j["ranking"].is_null()) throw ContractError(path + ": no ranking (ungated model?)");
    return j["ranking"].get<Ranking>();
  }
  if (j.contains("global")) {
    return Ranking::from_values(j["global"].get<std::vector<double>>(), RankingSource::shap);
  }
  throw ParseError(path + ": no ranking found");
}

inline double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

// ---- commands -------------------------------------------------------------

struct GenOptions {
  std::string dataset;
  std::size_t n = 1000;
  std::size_t noise = 5;
  double sigma = 1.0;
  std::size_t d = 10;
  std::size_t informative = 5;
  std::size_t redundant = 0;
  std::size_t duplicate = 0;
  std::size_t augment = 0;
  double augment_low = 0.0;
  double augment_high = 1.0;
  std::optional<std::uint64_t> seed;
  std::string out;
};

inline int cmd_gen(const GenOptions& o, Manifest m, std::ostream& out) {
  const std::uint64_t seed = o.seed.value_or(default_seed());
  Dataset ds;
  if (o.dataset == "synth") {
    ds = gen_synthetic(o.n, o.noise, seed);
  } else if (o.dataset == "friedman1") {
    ds = gen_friedman1(o.n, o.sigma, seed);
  } else if (o.dataset == "friedman2") {
    ds = gen_friedman2(o.n, o.sigma, seed);
  } else {
    ds = gen_classification(o.n, o.d, o.informative, o.redundant, o.duplicate, seed);
  }
  if (o.augment > 0) ds = augment_random_features(ds, o.augment, o.augment_low, o.augment_high, seed);
  std::ostringstream csv;
  write_csv(ds, csv);
  write_text(o.out, csv.str());
  const auto meta = sidecar_path(o.out);
  write_json(meta, make_sidecar(ds));

  m.params = {{"dataset", o.dataset}, {"n", o.n},
              {"noise", o.noise},     {"sigma", o.sigma},
              {"d", o.d},             {"informative", o.informative},
              {"redundant", o.redundant}, {"duplicate", o.duplicate},
              {"augment", o.augment}, {"augment_low", o.augment_low},
              {"augment_high", o.augment_high}};
  m.seeds = {{"data", seed}};
  m.outputs = {o.out, meta};
  write_manifest(o.out, m);
  out << "wrote " << o.out << " (" << ds.rows() << " x " << ds.cols() << ")\n";
  return kExitOk;
}

struct TrainOptions {
  std::string data;
  ModelOptions model;
  std::optional<std::uint64_t> seed;
  std::string out_model;
  std::string out_report;
};

inline int cmd_train(const TrainOptions& o, Manifest m, std::ostream& out) {
  const std::uint64_t seed = o.seed.value_or(default_seed());
  const Dataset ds = load_dataset(o.data);
  const auto [mc, tc] = resolve_configs(o.model, ds, o.model.kind == "scores", seed);
  const auto run = train_run(ds, mc, tc);
  write_json(o.out_model, run.model);
  write_json(o.out_report, run.report);

  m.params = options_json(o.model);
  m.params["model"] = o.model.kind;
  m.params["train_fraction"] = kTrainFraction;
  m.seeds = {{"model", seed}, {"split", seed}, {"batches", seed}};
  m.inputs = {o.data};
  m.outputs = {o.out_model, o.out_report};
  write_manifest(o.out_report, m);
  out << "final train loss " << run.report.final_train_loss << ", test accuracy "
      << run.report.test_accuracy << "\n";
  return kExitOk;
}

struct RankOptions {
  std::string model;
  std::string out;
};

inline int cmd_rank(const RankOptions& o, Manifest m, std::ostream& out) {
  const Model model = read_json(o.model).get<Model>();
  if (!model.scores) throw ContractError("rank: model '" + o.model + "' has no scores layer");
  const auto start = std::chrono::steady_clock::now();
  const Ranking ranking = extract_ranking(*model.scores);
  const double ms = elapsed_ms(start);
  nlohmann::json j = ranking;
  j["timing"] = {{"elapsed_ms", ms}};
  write_json(o.out, j);

  m.inputs = {o.model};
  m.outputs = {o.out};
  write_manifest(o.out, m);
  for (std::size_t k = 0; k < ranking.order.size(); ++k) {
    out << (k ? " " : "") << ranking.order[k] + 1;
  }
  out << "\n";
  return kExitOk;
}

struct ShapOptions {
  std::string model;
  std::string data;
  std::size_t samples = 100;
  std::size_t coalitions = 2048;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> split_seed;
  std::string out;
};

inline int cmd_shap(const ShapOptions& o, Manifest m, std::ostream& out) {
  const Model model = read_json(o.model).get<Model>();
  const std::uint64_t seed = o.seed.value_or(model.seed);
  const std::uint64_t split_seed = o.split_seed.value_or(model.seed);
  const Dataset ds = load_dataset(o.data);
  const auto [train_ds, test_ds] = split(ds, kTrainFraction, split_seed);
  const ShapResult result = explain_model(model, train_ds, test_ds, o.samples, o.coalitions, seed);
  nlohmann::json j = result;
  j["ranking"] = global_importance(result);
  write_json(o.out, j);

  m.params = {{"samples", o.samples}, {"coalitions", o.coalitions}};
  m.seeds = {{"shap", seed}, {"split", split_seed}};
  m.inputs = {o.model, o.data};
  m.outputs = {o.out};
  write_manifest(o.out, m);
  out << "explained " << result.n_samples << " samples in " << result.elapsed_ms << " ms\n";
  return kExitOk;
}

struct CompareOptions {
  std::vector<std::string> rankings;
  std::string truth;
  std::optional<std::size_t> top_k;
  std::string out;
};

inline int cmd_compare(const CompareOptions& o, Manifest m, std::ostream& out) {
  std::vector<Ranking> rankings;
  for (const auto& path : o.rankings) rankings.push_back(load_ranking(path));
  const auto sidecar = read_json(o.truth).get<Sidecar>();
  const Ranking truth = ground_truth_ranking(sidecar.ground_truth_importance);
  const auto relevant = relevant_features(sidecar.ground_truth_importance);
  for (const auto& r : rankings) {
    if (r.size() != truth.size()) {
      throw DimensionError("compare: ranking over " + std::to_string(r.size()) +
                           " features vs ground truth over " + std::to_string(truth.size()));
    }
  }
  const std::size_t top_k = o.top_k.value_or(relevant.size());
  if (top_k > truth.size()) throw ContractError("compare: --top-k exceeds feature count");

  nlohmann::json table = nlohmann::json::array();
  std::vector<std::size_t> matches(rankings.size(), 0);
  for (std::size_t p = 0; p < top_k; ++p) {
    nlohmann::json row{{"position", p + 1}, {"truth", truth.order[p] + 1}};
    nlohmann::json placed = nlohmann::json::array();
    nlohmann::json match = nlohmann::json::array();
    for (std::size_t r = 0; r < rankings.size(); ++r) {
      const bool ok = rankings[r].order[p] == truth.order[p];
      matches[r] += ok ? 1 : 0;
      placed.push_back(rankings[r].order[p] + 1);
      match.push_back(ok);
    }
    row["placed"] = placed;
    row["match"] = match;
    table.push_back(row);
  }
  const std::size_t n = rankings.size();
  std::vector<std::vector<double>> rho(n, std::vector<double>(n, 1.0));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) rho[a][b] = rho[b][a] = spearman(rankings[a], rankings[b]);
  std::vector<double> rho_truth;
  for (const auto& r : rankings) rho_truth.push_back(spearman(r, truth, relevant));

  nlohmann::json j{{"rankings", o.rankings},
                   {"ground_truth_order", truth.order},
                   {"top_k", top_k},
                   {"table", table},
                   {"matches", matches},
                   {"spearman", rho},
                   {"spearman_vs_truth", rho_truth}};
  write_json(o.out, j);

  m.params = {{"top_k", top_k}};
  m.inputs = o.rankings;
  m.inputs.push_back(o.truth);
  m.outputs = {o.out};
  write_manifest(o.out, m);
  for (std::size_t r = 0; r < n; ++r) {
    out << o.rankings[r] << ": " << matches[r] << "/" << top_k << " match, rho vs truth "
        << rho_truth[r] << "\n";
  }
  return kExitOk;
}

struct StabilityOptions {
  std::string data;
  ModelOptions model;
  std::size_t runs = 5;
  std::optional<std::uint64_t> base_seed;
  std::size_t samples = 100;
  std::size_t coalitions = 2048;
  std::string out;
};

struct StabilityResult {
  std::vector<std::uint64_t> seeds;
  std::vector<Ranking> scores_rankings;
  std::vector<Ranking> shap_rankings;
  std::vector<double> scores_variance;
  std::vector<double> shap_variance;
};

// Retrains the gated model once per seed and explains each trained model with
// Kernel SHAP; reports per-feature rank variance for both methods.
inline StabilityResult run_stability(const Dataset& ds, const ModelOptions& o, std::size_t runs,
                                     std::uint64_t base_seed, std::size_t samples,
                                     std::size_t coalitions) {
  if (runs < 2) throw ContractError("stability: need at least two runs");
  StabilityResult s;
  for (std::size_t i = 0; i < runs; ++i) {
    const std::uint64_t seed = base_seed + i;
    const auto [mc, tc] = resolve_configs(o, ds, true, seed);
    const auto run = train_run(ds, mc, tc);
    s.seeds.push_back(seed);
    s.scores_rankings.push_back(*run.report.ranking);
    s.shap_rankings.push_back(
        global_importance(explain_model(run.model, run.train, run.test, samples, coalitions, seed)));
  }
  s.scores_variance = rank_stability(s.scores_rankings);
  s.shap_variance = rank_stability(s.shap_rankings);
  return s;
}

inline nlohmann::json to_json(const StabilityResult& s) {
  nlohmann::json runs = nlohmann::json::array();
  for (std::size_t i = 0; i < s.seeds.size(); ++i) {
    runs.push_back({{"seed", s.seeds[i]},
                    {"scores_ranking", s.scores_rankings[i]},
                    {"shap_ranking", s.shap_rankings[i]}});
  }
  const double scores_mean = mean_of(s.scores_variance);
  const double shap_mean = mean_of(s.shap_variance);
  return {{"runs", runs},
          {"scores_variance", s.scores_variance},
          {"shap_variance", s.shap_variance},
          {"scores_mean_variance", scores_mean},
          {"shap_mean_variance", shap_mean},
          {"scores_not_less_stable", scores_mean <= shap_mean}};
}

inline int cmd_stability(const StabilityOptions& o, Manifest m, std::ostream& out) {
  const std::uint64_t base = o.base_seed.value_or(default_seed());
  const Dataset ds = load_dataset(o.data);
  const auto result = run_stability(ds, o.model, o.runs, base, o.samples, o.coalitions);
  const auto j = to_json(result);
  write_json(o.out, j);

  m.params = options_json(o.model);
  m.params["runs"] = o.runs;
  m.params["samples"] = o.samples;
  m.params["coalitions"] = o.coalitions;
  m.seeds = {{"base", base}};
  m.inputs = {o.data};
  m.outputs = {o.out};
  write_manifest(o.out, m);
  out << "mean rank variance: scores " << j["scores_mean_variance"].get<double>() << ", shap "
      << j["shap_mean_variance"].get<double>() << "\n";
  return kExitOk;
}

struct PlotOptions {
  std::string report;
  std::string out;
};

inline int cmd_plot(const PlotOptions& o, Manifest m, std::ostream& out) {
  const auto report = read_json(o.report).get<TrainReport>();
  if (report.scores_trajectory.empty()) {
    throw ContractError("plot: report '" + o.report + "' has no scores trajectory");
  }
  const std::size_t d = report.scores_trajectory.front().scores.size();
  std::ostringstream csv;
  csv << "epoch";
  for (std::size_t i = 1; i <= d; ++i) csv << ",s" << i;
  csv << "\n";
  for (const auto& snap : report.scores_trajectory) {
    csv << snap.epoch;
    for (double v : snap.scores) csv << "," << format_double(v);
    csv << "\n";
  }
  write_text(o.out, csv.str());

  m.inputs = {o.report};
  m.outputs = {o.out};
  write_manifest(o.out, m);
  out << "wrote " << report.scores_trajectory.size() << " rows to " << o.out << "\n";
  return kExitOk;
}

// ---- entry point ----------------------------------------------------------

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

inline int cmd_replay(const std::string& path, std::ostream& out, std::ostream& err) {
  const auto j = read_json(path);
  const auto args = j.at("args").get<std::vector<std::string>>();
  if (!args.empty() && args.front() == "replay") throw ContractError("replay: manifest replays itself");
  return run(args, out, err);
}

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learnable feature-importance gating: data generation, training, ranking and SHAP"};
  app.name("scoregate");
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  auto seed_option = [](CLI::App* cmd, std::optional<std::uint64_t>& target,
                        const std::string& name = "--seed") {
    return cmd->add_option_function<std::string>(
        name, [&target](const std::string& s) { target = parse_seed(s); },
        "defaults to SCOREGATE_SEED or 0");
  };

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen", "generate a dataset CSV and its sidecar");
  gen_cmd->add_option("--dataset", gen.dataset)->required()
      ->check(CLI::IsMember({"synth", "friedman1", "friedman2", "clf"}));
  gen_cmd->add_option("--n", gen.n)->check(CLI::PositiveNumber)->capture_default_str();
  gen_cmd->add_option("--noise", gen.noise, "synth: irrelevant features")->capture_default_str();
  gen_cmd->add_option("--sigma", gen.sigma, "friedman: noise sd")->capture_default_str();
  gen_cmd->add_option("--d", gen.d, "clf: features")->capture_default_str();
  gen_cmd->add_option("--informative", gen.informative)->capture_default_str();
  gen_cmd->add_option("--redundant", gen.redundant)->capture_default_str();
  gen_cmd->add_option("--duplicate", gen.duplicate)->capture_default_str();
  gen_cmd->add_option("--augment", gen.augment, "append uniform irrelevant columns")
      ->capture_default_str();
  gen_cmd->add_option("--augment-low", gen.augment_low)->capture_default_str();
  gen_cmd->add_option("--augment-high", gen.augment_high)->capture_default_str();
  seed_option(gen_cmd, gen.seed);
  gen_cmd->add_option("--out", gen.out)->required();

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "train a vanilla or gated model");
  train_cmd->add_option("--data", tr.data)->required();
  add_model_options(train_cmd, tr.model, true);
  seed_option(train_cmd, tr.seed);
  train_cmd->add_option("--out-model", tr.out_model)->required();
  train_cmd->add_option("--out-report", tr.out_report)->required();

  RankOptions rk;
  auto* rank_cmd = app.add_subcommand("rank", "feature ranking from a gated model's scores");
  rank_cmd->add_option("--model", rk.model)->required();
  rank_cmd->add_option("--out", rk.out)->required();

  ShapOptions sh;
  auto* shap_cmd = app.add_subcommand("shap", "Kernel SHAP global importance");
  shap_cmd->add_option("--model", sh.model)->required();
  shap_cmd->add_option("--data", sh.data)->required();
  shap_cmd->add_option("--samples", sh.samples)->check(CLI::PositiveNumber)->capture_default_str();
  shap_cmd->add_option("--coalitions", sh.coalitions)->capture_default_str();
  seed_option(shap_cmd, sh.seed);
  seed_option(shap_cmd, sh.split_seed, "--split-seed");
  shap_cmd->add_option("--out", sh.out)->required();

  CompareOptions cmp;
  auto* compare_cmd = app.add_subcommand("compare", "match rankings against ground truth");
  compare_cmd->add_option("--ranking", cmp.rankings, "ranking, report or SHAP file")->required();
  compare_cmd->add_option("--truth", cmp.truth, "dataset sidecar")->required();
  compare_cmd->add_option_function<std::size_t>("--top-k", [&cmp](std::size_t k) { cmp.top_k = k; });
  compare_cmd->add_option("--out", cmp.out)->required();

  StabilityOptions st;
  auto* stability_cmd = app.add_subcommand("stability", "rank variance over retrainings");
  stability_cmd->add_option("--data", st.data)->required();
  add_model_options(stability_cmd, st.model, false);
  stability_cmd->add_option("--runs", st.runs)->capture_default_str();
  seed_option(stability_cmd, st.base_seed, "--base-seed");
  stability_cmd->add_option("--samples", st.samples)->check(CLI::PositiveNumber)
      ->capture_default_str();
  stability_cmd->add_option("--coalitions", st.coalitions)->capture_default_str();
  stability_cmd->add_option("--out", st.out)->required();

  PlotOptions pl;
  auto* plot_cmd = app.add_subcommand("plot", "scores trajectory as CSV");
  plot_cmd->add_option("--report", pl.report)->required();
  plot_cmd->add_option("--out", pl.out)->required();

  std::string replay_manifest;
  auto* replay_cmd = app.add_subcommand("replay", "rerun a command from its manifest");
  replay_cmd->add_option("--manifest", replay_manifest)->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  Manifest manifest;
  manifest.args = args;
  manifest.command = app.get_subcommands().front()->get_name();
  try {
    if (gen_cmd->parsed()) return cmd_gen(gen, manifest, out);
    if (train_cmd->parsed()) return cmd_train(tr, manifest, out);
    if (rank_cmd->parsed()) return cmd_rank(rk, manifest, out);
    if (shap_cmd->parsed()) return cmd_shap(sh, manifest, out);
    if (compare_cmd->parsed()) return cmd_compare(cmp, manifest, out);
    if (stability_cmd->parsed()) return cmd_stability(st, manifest, out);
    if (plot_cmd->parsed()) return cmd_plot(pl, manifest, out);
    if (replay_cmd->parsed()) return cmd_replay(replay_manifest, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace scoregate::cli
