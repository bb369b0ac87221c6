#pragma once

// Seeded dataset generators, CSV ingestion and train/test splitting.
//
// Every generated column draws from its own RNG stream, so e.g. adding noise
// features to gen_synthetic leaves the relevant columns untouched.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "scoregate/error.hpp"
#include "scoregate/rng.hpp"
#include "scoregate/tensor.hpp"

namespace scoregate {

enum class Task { classification, regression };

inline const char* to_string(Task task) {
  return task == Task::classification ? "classification" : "regression";
}

inline Task task_from_string(const std::string& name) {
  if (name == "classification") return Task::classification;
  if (name == "regression") return Task::regression;
  throw ParseError("unknown task '" + name + "'");
}

struct FeatureMeta {
  std::string name;
  std::optional<double> importance;
  bool relevant = false;
};

struct Provenance {
  std::string generator;
  nlohmann::json params = nlohmann::json::object();
  std::uint64_t seed = 0;
};

struct Dataset {
  Tensor x;
  std::vector<double> y;
  std::vector<FeatureMeta> features;
  Task task = Task::classification;
  std::optional<Provenance> provenance;

  std::size_t rows() const noexcept { return x.rows(); }
  std::size_t cols() const noexcept { return x.cols(); }

  // Present only when every feature carries a ground-truth importance.
  std::optional<std::vector<double>> ground_truth_importance() const {
    std::vector<double> out;
    for (const auto& f : features) {
      if (!f.importance) return std::nullopt;
      out.push_back(*f.importance);
    }
    return out;
  }

  Dataset select_rows(std::span<const std::size_t> idx) const {
    Dataset out = *this;
    out.x = Tensor(idx.size(), cols());
    out.y.resize(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto src = x.row(idx[k]);
      std::copy(src.begin(), src.end(), out.x.row(k).begin());
      out.y[k] = y[idx[k]];
    }
    return out;
  }

  Dataset select_columns(std::span<const std::size_t> idx) const {
    Dataset out = *this;
    out.x = Tensor(rows(), idx.size());
    out.features.clear();
    for (std::size_t c = 0; c < idx.size(); ++c) {
      if (idx[c] >= cols()) throw DimensionError("select_columns: column out of range");
      out.features.push_back(features[idx[c]]);
      for (std::size_t r = 0; r < rows(); ++r) out.x(r, c) = x(r, idx[c]);
    }
    return out;
  }
};

inline bool is_binary(std::span<const double> y) {
  for (double v : y)
    if (v != 0.0 && v != 1.0) return false;
  return true;
}

inline void validate(const Dataset& ds) {
  if (ds.rows() == 0 || ds.cols() == 0) throw ContractError("dataset: empty");
  if (ds.y.size() != ds.rows()) throw DimensionError("dataset: target length != row count");
  if (ds.features.size() != ds.cols()) throw DimensionError("dataset: feature metadata mismatch");
  if (ds.task == Task::classification && !is_binary(ds.y)) {
    throw ContractError("dataset: classification targets must be 0 or 1");
  }
}

namespace detail {

inline FeatureMeta feature(std::size_t index, double importance) {
  return FeatureMeta{"x" + std::to_string(index + 1), importance, importance > 0.0};
}

inline void fill_uniform_column(Tensor& x, std::size_t col, double lo, double hi,
                                std::uint64_t seed) {
  Rng rng(seed, col + 1);
  for (std::size_t r = 0; r < x.rows(); ++r) x(r, col) = rng.uniform(lo, hi);
}

// Stream reserved for target noise, well away from the per-column streams.
inline constexpr std::uint64_t kNoiseStream = 0x6E6F697365ULL;

}  // namespace detail

inline constexpr double kSyntheticCoefficients[5] = {0.2, 0.3, 0.1, 0.05, 0.5};
inline constexpr double kSyntheticThreshold = 7.5;

// Weighted sum of the five relevant synthetic features.
inline double synthetic_score(std::span<const double> relevant) {
  double z = 0.0;
  for (std::size_t i = 0; i < 5; ++i) z += kSyntheticCoefficients[i] * relevant[i];
  return z;
}

inline Dataset gen_synthetic(std::size_t n, std::size_t noise_features, std::uint64_t seed) {
  if (n == 0) throw ContractError("gen_synthetic: n must be at least 1");
  const std::size_t d = 5 + noise_features;
  Dataset ds;
  ds.task = Task::classification;
  ds.x = Tensor(n, d);
  for (std::size_t c = 0; c < d; ++c) {
    if (c < 5) {
      detail::fill_uniform_column(ds.x, c, 4.0, 10.0, seed);
      ds.features.push_back(detail::feature(c, kSyntheticCoefficients[c]));
    } else {
      detail::fill_uniform_column(ds.x, c, 0.0, 1.0, seed);
      ds.features.push_back(detail::feature(c, 0.0));
    }
  }
  ds.y.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    ds.y[r] = synthetic_score(ds.x.row(r)) > kSyntheticThreshold ? 1.0 : 0.0;
  }
  ds.provenance = Provenance{"synth", {{"n", n}, {"noise", noise_features}}, seed};
  return ds;
}

inline double friedman1_target(std::span<const double> x) {
  return 10.0 * std::sin(std::numbers::pi * x[0] * x[1]) + 20.0 * (x[2] - 0.5) * (x[2] - 0.5) +
         10.0 * x[3] + 5.0 * x[4];
}

// Features 1-5 enter the target; the generator records binary relevance
// (importance 1) because the response has no scalar per-feature weight.
inline Dataset gen_friedman1(std::size_t n, double sigma, std::uint64_t seed) {
  if (n == 0) throw ContractError("gen_friedman1: n must be at least 1");
  if (sigma < 0.0) throw ContractError("gen_friedman1: sigma must be non-negative");
  Dataset ds;
  ds.task = Task::regression;
  ds.x = Tensor(n, 10);
  for (std::size_t c = 0; c < 10; ++c) {
    detail::fill_uniform_column(ds.x, c, 0.0, 1.0, seed);
    ds.features.push_back(detail::feature(c, c < 5 ? 1.0 : 0.0));
  }
  Rng noise(seed, detail::kNoiseStream);
  ds.y.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    ds.y[r] = friedman1_target(ds.x.row(r));
    if (sigma > 0.0) ds.y[r] += noise.normal(0.0, sigma);
  }
  ds.provenance = Provenance{"friedman1", {{"n", n}, {"sigma", sigma}}, seed};
  return ds;
}

inline double friedman2_target(std::span<const double> x) {
  const double inner = x[1] * x[2] - 1.0 / (x[1] * x[3]);
  return std::sqrt(x[0] * x[0] + inner * inner);
}

inline Dataset gen_friedman2(std::size_t n, double sigma, std::uint64_t seed) {
  if (n == 0) throw ContractError("gen_friedman2: n must be at least 1");
  if (sigma < 0.0) throw ContractError("gen_friedman2: sigma must be non-negative");
  constexpr double pi = std::numbers::pi;
  const double lo[4] = {0.0, 40.0 * pi, 0.0, 1.0};
  const double hi[4] = {100.0, 560.0 * pi, 1.0, 11.0};
  Dataset ds;
  ds.task = Task::regression;
  ds.x = Tensor(n, 4);
  for (std::size_t c = 0; c < 4; ++c) {
    detail::fill_uniform_column(ds.x, c, lo[c], hi[c], seed);
    ds.features.push_back(detail::feature(c, 1.0));
  }
  Rng noise(seed, detail::kNoiseStream);
  ds.y.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    ds.y[r] = friedman2_target(ds.x.row(r));
    if (sigma > 0.0) ds.y[r] += noise.normal(0.0, sigma);
  }
  ds.provenance = Provenance{"friedman2", {{"n", n}, {"sigma", sigma}}, seed};
  return ds;
}

// Distance between a class mean and the origin along each informative axis;
// the two class means sit at +/- this value with a per-feature random sign.
inline constexpr double kClassSeparation = 1.0;

// Columns are laid out as [informative | redundant | duplicate | noise].
// Informative columns are unit Gaussians around class-dependent means,
// redundant columns random linear combinations of the informative ones,
// duplicates exact copies of randomly chosen informative columns, and the
// rest standard-Gaussian noise. Rows are shuffled; classes are balanced.
inline Dataset gen_classification(std::size_t n, std::size_t d, std::size_t n_informative,
                                  std::size_t n_redundant, std::size_t n_duplicate,
                                  std::uint64_t seed) {
  if (n < 2) throw ContractError("gen_classification: n must be at least 2");
  if (n_informative == 0) throw ContractError("gen_classification: need an informative feature");
  if (n_informative + n_redundant + n_duplicate > d) {
    throw ContractError("gen_classification: informative + redundant + duplicate exceeds d");
  }
  Rng layout(seed, stream_id("layout"));
  std::vector<double> sign(n_informative);
  for (double& s : sign) s = layout.uniform() < 0.5 ? -1.0 : 1.0;

  std::vector<double> labels(n);
  for (std::size_t r = 0; r < n; ++r) labels[r] = r < n / 2 ? 0.0 : 1.0;
  Rng rows(seed, stream_id("rows"));
  rows.shuffle(labels);

  Dataset ds;
  ds.task = Task::classification;
  ds.x = Tensor(n, d);
  ds.y = labels;
  for (std::size_t c = 0; c < n_informative; ++c) {
    Rng rng(seed, c + 1);
    for (std::size_t r = 0; r < n; ++r) {
      const double centre = sign[c] * kClassSeparation * (labels[r] == 1.0 ? 1.0 : -1.0);
      ds.x(r, c) = centre + rng.normal();
    }
  }
  for (std::size_t j = 0; j < n_redundant; ++j) {
    const std::size_t c = n_informative + j;
    std::vector<double> coef(n_informative);
    for (double& v : coef) v = layout.uniform(-1.0, 1.0);
    for (std::size_t r = 0; r < n; ++r) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n_informative; ++i) acc += coef[i] * ds.x(r, i);
      ds.x(r, c) = acc;
    }
  }
  for (std::size_t j = 0; j < n_duplicate; ++j) {
    const std::size_t c = n_informative + n_redundant + j;
    const auto src = static_cast<std::size_t>(layout.below(n_informative));
    for (std::size_t r = 0; r < n; ++r) ds.x(r, c) = ds.x(r, src);
  }
  for (std::size_t c = n_informative + n_redundant + n_duplicate; c < d; ++c) {
    Rng rng(seed, c + 1);
    for (std::size_t r = 0; r < n; ++r) ds.x(r, c) = rng.normal();
  }
  for (std::size_t c = 0; c < d; ++c) ds.features.push_back(detail::feature(c, c < n_informative ? 1.0 : 0.0));
  ds.provenance = Provenance{"clf",
                             {{"n", n},
                              {"d", d},
                              {"informative", n_informative},
                              {"redundant", n_redundant},
                              {"duplicate", n_duplicate}},
                             seed};
  return ds;
}

// Appends k irrelevant columns drawn from U[low, high).
inline Dataset augment_random_features(const Dataset& ds, std::size_t k, double low, double high,
                                       std::uint64_t seed) {
  if (k == 0) throw ContractError("augment_random_features: k must be at least 1");
  if (!(low < high)) throw ContractError("augment_random_features: need low < high");
  const std::size_t d0 = ds.cols();
  Dataset out = ds;
  out.x = Tensor(ds.rows(), d0 + k);
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    const auto src = ds.x.row(r);
    std::copy(src.begin(), src.end(), out.x.row(r).begin());
  }
  for (std::size_t j = 0; j < k; ++j) {
    Rng rng(seed, stream_id("augment") + j);
    for (std::size_t r = 0; r < ds.rows(); ++r) out.x(r, d0 + j) = rng.uniform(low, high);
    out.features.push_back(FeatureMeta{"rand" + std::to_string(j + 1), 0.0, false});
  }
  if (out.provenance) {
    out.provenance->params["augment"] = {{"k", k}, {"low", low}, {"high", high}, {"seed", seed}};
  }
  return out;
}

// Seeded shuffle, then the first ceil(n * fraction) rows train.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction,
                                         std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ContractError("split: fraction must lie strictly between 0 and 1");
  }
  const std::size_t n = ds.rows();
  const auto n_train =
      static_cast<std::size_t>(std::ceil(static_cast<double>(n) * train_fraction - 1e-9));
  if (n < 2 || n_train == 0 || n_train >= n) {
    throw ContractError("split: " + std::to_string(n) + " rows cannot be split at " +
                        std::to_string(train_fraction));
  }
  Rng rng(seed, stream_id("split"));
  const auto perm = rng.permutation(n);
  const std::span<const std::size_t> all(perm);
  return {ds.select_rows(all.first(n_train)), ds.select_rows(all.subspan(n_train))};
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void write_csv(const Dataset& ds, std::ostream& out) {
  for (const auto& f : ds.features) out << f.name << ',';
  out << "y\n";
  for (std::size_t r = 0; r < ds.rows(); ++r) {
    for (std::size_t c = 0; c < ds.cols(); ++c) out << format_double(ds.x(r, c)) << ',';
    out << format_double(ds.y[r]) << '\n';
  }
}

inline void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  write_csv(ds, out);
  if (!out) throw IoError("failed writing " + path);
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

// Header row required; the last column must be "y". Row numbers in errors
// are file line numbers (the header is row 1).
inline Dataset read_csv(std::istream& in, const std::string& origin = "<stream>") {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(origin + ": empty file");
  std::vector<std::string> header;
  for (auto f : detail::split_fields(line)) header.emplace_back(detail::trim(f));
  if (header.size() < 2 || header.back() != "y") {
    throw ParseError(origin + ": header must have at least one feature and end with column 'y'");
  }
  const std::size_t d = header.size() - 1;
  std::vector<double> values;
  std::vector<double> y;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(line);
    if (fields.size() != header.size()) {
      throw ParseError(origin + ": row " + std::to_string(line_no) + " has " +
                       std::to_string(fields.size()) + " fields, expected " +
                       std::to_string(header.size()));
    }
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const auto cell = detail::trim(fields[c]);
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || res.ec != std::errc{} || res.ptr != cell.data() + cell.size() ||
          !std::isfinite(v)) {
        throw ParseError(origin + ": non-numeric cell '" + std::string(cell) + "' at row " +
                         std::to_string(line_no) + ", column " + header[c]);
      }
      (c < d ? values : y).push_back(v);
    }
  }
  if (y.empty()) throw ParseError(origin + ": no data rows");
  Dataset ds;
  const std::size_t n = y.size();
  ds.x = Tensor(n, d, std::move(values));
  ds.y = std::move(y);
  for (std::size_t c = 0; c < d; ++c) ds.features.push_back(FeatureMeta{header[c], std::nullopt, false});
  ds.task = is_binary(ds.y) ? Task::classification : Task::regression;
  return ds;
}

inline Dataset load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_csv(in, path);
}

// Generator metadata written next to a generated CSV.
struct Sidecar {
  std::string generator;
  nlohmann::json params = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::vector<double> ground_truth_importance;
};

inline void to_json(nlohmann::json& j, const Sidecar& s) {
  j = nlohmann::json{{"generator", s.generator},
                     {"params", s.params},
                     {"seed", s.seed},
                     {"ground_truth_importance", s.ground_truth_importance}};
}

inline void from_json(const nlohmann::json& j, Sidecar& s) {
  s.generator = j.at("generator").get<std::string>();
  s.params = j.at("params");
  s.seed = j.at("seed").get<std::uint64_t>();
  s.ground_truth_importance = j.at("ground_truth_importance").get<std::vector<double>>();
}

inline Sidecar make_sidecar(const Dataset& ds) {
  if (!ds.provenance) throw ContractError("sidecar: dataset has no generator provenance");
  auto gt = ds.ground_truth_importance();
  if (!gt) throw ContractError("sidecar: dataset lacks ground-truth importance");
  return Sidecar{ds.provenance->generator, ds.provenance->params, ds.provenance->seed, *gt};
}

// Copies sidecar ground truth onto a dataset loaded from CSV.
inline void attach_ground_truth(Dataset& ds, const Sidecar& sidecar) {
  if (sidecar.ground_truth_importance.size() != ds.cols()) {
    throw DimensionError("sidecar has " + std::to_string(sidecar.ground_truth_importance.size()) +
                         " importances for " + std::to_string(ds.cols()) + " features");
  }
  for (std::size_t c = 0; c < ds.cols(); ++c) {
    ds.features[c].importance = sidecar.ground_truth_importance[c];
    ds.features[c].relevant = sidecar.ground_truth_importance[c] > 0.0;
  }
  ds.provenance = Provenance{sidecar.generator, sidecar.params, sidecar.seed};
}

}  // namespace scoregate
