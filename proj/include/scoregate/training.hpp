#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scoregate/autodiff.hpp"
#include "scoregate/datasets.hpp"
#include "scoregate/error.hpp"
#include "scoregate/models.hpp"
#include "scoregate/scores.hpp"

namespace scoregate {

enum class LossKind { bce, mse };

inline const char* to_string(LossKind k) { return k == LossKind::bce ? "bce" : "mse"; }

inline LossKind loss_kind_from_string(const std::string& name) {
  if (name == "bce") return LossKind::bce;
  if (name == "mse") return LossKind::mse;
  throw ParseError("unknown loss '" + name + "'");
}

struct TrainConfig {
  std::size_t epochs = 1000;
  double lr = 0.001;
  LossKind loss = LossKind::bce;
  std::uint64_t seed = 0;
  std::size_t record_scores_every = 10;
  std::size_t batch_size = 32;  // 0 = full batch
  bool standardize = true;       // fit input normalization on the train split
  PenaltyKind penalty = PenaltyKind::none;
  double lambda = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct ScoresSnapshot {
  std::size_t epoch = 0;
  std::vector<double> scores;

  friend bool operator==(const ScoresSnapshot&, const ScoresSnapshot&) = default;
};

struct TrainReport {
  double final_train_loss = 0.0;
  double test_accuracy = 0.0;
  std::vector<EpochRecord> per_epoch;
  std::vector<ScoresSnapshot> scores_trajectory;
  std::optional<Ranking> ranking;
  double wall_time_ms = 0.0;
  double ranking_extraction_time_ms = 0.0;
};

struct AdamState {
  Tensor m;
  Tensor v;
  std::uint64_t t = 0;
};

struct AdamHyper {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam. The step counter is advanced before use, so the first
// call runs with t = 1.
inline void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamHyper& h) {
  if (!param.same_shape(grad)) {
    throw DimensionError("adam_step: param " + param.shape_string() + " vs grad " +
                         grad.shape_string());
  }
  if (state.m.empty()) {
    state.m = Tensor(param.rows(), param.cols());
    state.v = Tensor(param.rows(), param.cols());
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * grad[i];
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    param[i] -= h.lr * m_hat / (std::sqrt(v_hat) + h.eps);
  }
}

inline double bce_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw DimensionError("bce_loss: length mismatch");
  autodiff::Graph g;
  const auto p = g.leaf(Tensor::column_vector(pred), false);
  return g.value(g.bce_loss(p, g.leaf(Tensor::column_vector(target), false)))[0];
}

inline double mse_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) throw DimensionError("mse_loss: length mismatch");
  autodiff::Graph g;
  const auto p = g.leaf(Tensor::column_vector(pred), false);
  return g.value(g.mse_loss(p, g.leaf(Tensor::column_vector(target), false)))[0];
}

// Fraction of samples where pred and target fall on the same side of
// `threshold` (>= counts as positive). Classification uses 0.5; regression
// uses the training-split median of the normalised target.
inline double accuracy(std::span<const double> pred, std::span<const double> target,
                       double threshold = 0.5) {
  if (pred.size() != target.size()) throw DimensionError("accuracy: length mismatch");
  if (pred.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if ((pred[i] >= threshold) == (target[i] >= threshold)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

// Min-max target scaling fitted on the training split.
struct TargetScaling {
  double min = 0.0;
  double max = 1.0;
  double median = 0.5;  // of the scaled training targets

  static TargetScaling fit(std::span<const double> y) {
    TargetScaling s;
    const auto [lo, hi] = std::minmax_element(y.begin(), y.end());
    s.min = *lo;
    s.max = *hi;
    auto scaled = s.apply(y);
    std::sort(scaled.begin(), scaled.end());
    const std::size_t n = scaled.size();
    s.median = n % 2 == 1 ? scaled[n / 2] : 0.5 * (scaled[n / 2 - 1] + scaled[n / 2]);
    return s;
  }

  std::vector<double> apply(std::span<const double> y) const {
    const double range = max - min;
    std::vector<double> out(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = range > 0.0 ? (y[i] - min) / range : 0.5;
    return out;
  }
};

namespace detail {

inline std::vector<double> training_targets(const Dataset& ds, Task task,
                                            const std::optional<TargetScaling>& scaling) {
  if (task == Task::regression && scaling) return scaling->apply(ds.y);
  return ds.y;
}

inline double ms_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

}  // namespace detail

// Adam training over shuffled mini-batches (full batch when cfg.batch_size is 0).
// Updates `model` in place, including its input normalization when
// cfg.standardize is set.
inline TrainReport train(Model& model, const Dataset& train_ds, const Dataset& test_ds,
                         const TrainConfig& cfg) {
  validate(train_ds);
  validate(test_ds);
  if (cfg.epochs == 0) throw ContractError("train: epochs must be at least 1");
  if (cfg.lr < 0.0 || !std::isfinite(cfg.lr)) throw ContractError("train: lr must be non-negative");
  if (cfg.record_scores_every == 0) throw ContractError("train: record interval must be positive");
  if (train_ds.cols() != model.config.input_dim || test_ds.cols() != model.config.input_dim) {
    throw DimensionError("train: dataset has " + std::to_string(train_ds.cols()) +
                         " features, model expects " + std::to_string(model.config.input_dim));
  }
  if (cfg.loss == LossKind::bce && train_ds.task != Task::classification) {
    throw ContractError("train: bce loss requires binary classification targets");
  }
  const auto start = std::chrono::steady_clock::now();
  if (cfg.standardize) model.normalization = fit_normalization(train_ds.x);
  const Task task = train_ds.task;
  std::optional<TargetScaling> scaling;
  if (task == Task::regression) scaling = TargetScaling::fit(train_ds.y);
  const double threshold = scaling ? scaling->median : 0.5;
  const auto y_train = detail::training_targets(train_ds, task, scaling);
  const Tensor y_tensor = Tensor::column_vector(y_train);

  const AdamHyper hyper{cfg.lr};
  std::map<std::string, AdamState> states;
  AdamState scores_state;

  TrainReport report;
  report.per_epoch.reserve(cfg.epochs);
  auto snapshot = [&](std::size_t epoch) {
    if (model.scores) report.scores_trajectory.push_back({epoch, model.scores->scores});
  };
  snapshot(0);

  auto build_loss = [&](autodiff::Graph& g, const BoundModel& bound, const Tensor& x,
                        const Tensor& y, autodiff::Var& pred) {
    pred = forward(g, model, bound, g.leaf(x, false));
    const auto target = g.leaf(y, false);
    return cfg.loss == LossKind::bce ? g.bce_loss(pred, target) : g.mse_loss(pred, target);
  };

  struct StepResult {
    double loss = 0.0;
    std::size_t hits = 0;
  };
  // One Adam update on a batch; returns the pre-update loss.
  auto step = [&](const Tensor& x, const Tensor& y, std::size_t epoch) {
    autodiff::Graph g;
    const auto bound = bind(g, model, true);
    autodiff::Var pred;
    autodiff::Var loss;
    try {
      loss = build_loss(g, bound, x, y, pred);
    } catch (const NumericError& e) {
      throw NumericError("train: non-finite value at epoch " + std::to_string(epoch) + " (" +
                         e.what() + ")");
    }
    StepResult result{g.value(loss)[0], 0};
    const auto& p = g.value(pred);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if ((p[i] >= threshold) == (y[i] >= threshold)) ++result.hits;
    }
    g.backward(loss);
    for (auto& [name, param] : model.parameters) {
      adam_step(param, g.grad(bound.at(name)), states[name], hyper);
    }
    if (model.scores) {
      Tensor s = Tensor::row_vector(model.scores->scores);
      Tensor grad = g.grad(*bound.scores);
      if (cfg.lambda > 0.0) {
        const auto pg = sparsity_penalty_grad(weights(*model.scores), cfg.penalty, cfg.lambda);
        for (std::size_t i = 0; i < pg.size(); ++i) grad[i] += pg[i];
      }
      adam_step(s, grad, scores_state, hyper);
      model.scores->scores = s.values();
    }
    return result;
  };

  const std::size_t n = train_ds.rows();
  const bool full_batch = cfg.batch_size == 0 || cfg.batch_size >= n;
  Rng batch_rng(cfg.seed, stream_id("batches"));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Penalty is evaluated at the epoch-start scores.
    const double penalty =
        model.scores ? sparsity_penalty(weights(*model.scores), cfg.penalty, cfg.lambda) : 0.0;
    double loss_sum = 0.0;
    std::size_t hits = 0;
    if (full_batch) {
      const auto r = step(train_ds.x, y_tensor, epoch);
      loss_sum = r.loss * static_cast<double>(n);
      hits = r.hits;
    } else {
      batch_rng.shuffle(order);
      for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
        const std::size_t len = std::min(cfg.batch_size, n - begin);
        Tensor xb(len, train_ds.cols());
        Tensor yb(len, 1);
        for (std::size_t k = 0; k < len; ++k) {
          const auto src = train_ds.x.row(order[begin + k]);
          std::copy(src.begin(), src.end(), xb.row(k).begin());
          yb[k] = y_train[order[begin + k]];
        }
        const auto r = step(xb, yb, epoch);
        loss_sum += r.loss * static_cast<double>(len);
        hits += r.hits;
      }
    }
    const double loss_value = loss_sum / static_cast<double>(n) + penalty;
    if (!std::isfinite(loss_value)) {
      throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
    }
    report.per_epoch.push_back(
        {epoch, loss_value, static_cast<double>(hits) / static_cast<double>(n)});
    if (model.scores && epoch % cfg.record_scores_every == 0) snapshot(epoch);
  }

  {
    autodiff::Graph g;
    const auto bound = bind(g, model, false);
    autodiff::Var pred;
    report.final_train_loss = g.value(build_loss(g, bound, train_ds.x, y_tensor, pred))[0];
    if (model.scores && cfg.lambda > 0.0) {
      report.final_train_loss += sparsity_penalty(weights(*model.scores), cfg.penalty, cfg.lambda);
    }
  }
  const auto test_pred = predict(model, test_ds.x);
  report.test_accuracy =
      accuracy(test_pred, detail::training_targets(test_ds, task, scaling), threshold);

  if (model.scores) {
    const auto t0 = std::chrono::steady_clock::now();
    report.ranking = extract_ranking(*model.scores);
    report.ranking_extraction_time_ms = detail::ms_since(t0);
  }
  report.wall_time_ms = detail::ms_since(start);
  return report;
}

// Timing fields live under "timing" so deterministic content can be compared
// with that key removed.
inline void to_json(nlohmann::json& j, const TrainReport& r) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.per_epoch) {
    epochs.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"accuracy", e.accuracy}});
  }
  nlohmann::json trajectory = nlohmann::json::array();
  for (const auto& s : r.scores_trajectory) trajectory.push_back({{"epoch", s.epoch}, {"s", s.scores}});
  j = nlohmann::json{{"final_train_loss", r.final_train_loss},
                     {"test_accuracy", r.test_accuracy},
                     {"per_epoch", epochs},
                     {"scores_trajectory", trajectory},
                     {"timing",
                      {{"wall_time_ms", r.wall_time_ms},
                       {"ranking_extraction_time_ms", r.ranking_extraction_time_ms}}}};
  j["ranking"] = r.ranking ? nlohmann::json(*r.ranking) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, TrainReport& r) {
  r.final_train_loss = j.at("final_train_loss").get<double>();
  r.test_accuracy = j.at("test_accuracy").get<double>();
  r.per_epoch.clear();
  for (const auto& e : j.at("per_epoch")) {
    r.per_epoch.push_back({e.at("epoch").get<std::size_t>(), e.at("loss").get<double>(),
                           e.at("accuracy").get<double>()});
  }
  r.scores_trajectory.clear();
  for (const auto& s : j.at("scores_trajectory")) {
    r.scores_trajectory.push_back(
        {s.at("epoch").get<std::size_t>(), s.at("s").get<std::vector<double>>()});
  }
  r.ranking.reset();
  if (j.contains("ranking") && !j["ranking"].is_null()) r.ranking = j["ranking"].get<Ranking>();
  const auto& timing = j.at("timing");
  r.wall_time_ms = timing.at("wall_time_ms").get<double>();
  r.ranking_extraction_time_ms = timing.at("ranking_extraction_time_ms").get<double>();
}

}  // namespace scoregate
