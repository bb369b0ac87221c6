#pragma once

// Vanilla and scores-gated predictors.
//
// Layer indices: 0 is the input, k in 1..H is the output of hidden layer k.
// A gated model multiplies the activations of its gate layer elementwise by
// softmax(s) before they reach the next linear map. Both backbones end with
// a single sigmoid unit.
//
// Attention backbone: each feature value becomes a token
//   token_i = x_i * embed.scale[i] + embed.position[i]      (d x m)
// followed by one single-head self-attention block with residual
// connections, mean pooling over tokens, and the fully connected head.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scoregate/autodiff.hpp"
#include "scoregate/error.hpp"
#include "scoregate/rng.hpp"
#include "scoregate/scores.hpp"
#include "scoregate/tensor.hpp"

namespace scoregate {

enum class Backbone { mlp, attention };

inline const char* to_string(Backbone b) { return b == Backbone::mlp ? "mlp" : "attention"; }

inline Backbone backbone_from_string(const std::string& name) {
  if (name == "mlp") return Backbone::mlp;
  if (name == "attention") return Backbone::attention;
  throw ParseError("unknown backbone '" + name + "'");
}

struct ModelConfig {
  std::size_t input_dim = 0;
  Backbone backbone = Backbone::mlp;
  std::vector<std::size_t> hidden_widths{32, 16};
  std::size_t model_dim = 16;  // attention only
  std::size_t ffn_dim = 32;    // attention only
  bool gated = true;
  std::size_t gate_layer = 0;
  ScoresInit scores_init = ScoresInit::zero;
  std::optional<std::vector<double>> scores_values;

  std::size_t layer_count() const noexcept { return hidden_widths.size() + 1; }

  std::size_t gate_width() const {
    return gate_layer == 0 ? input_dim : hidden_widths.at(gate_layer - 1);
  }
};

inline void validate(const ModelConfig& cfg) {
  if (cfg.input_dim == 0) throw ContractError("model config: input_dim must be positive");
  for (std::size_t w : cfg.hidden_widths)
    if (w == 0) throw ContractError("model config: hidden widths must be positive");
  if (cfg.backbone == Backbone::attention && (cfg.model_dim == 0 || cfg.ffn_dim == 0)) {
    throw ContractError("model config: attention dims must be positive");
  }
  if (cfg.gated) {
    if (cfg.gate_layer >= cfg.layer_count()) {
      throw ContractError("model config: gate layer " + std::to_string(cfg.gate_layer) +
                          " out of range for " + std::to_string(cfg.layer_count()) + " layers");
    }
    if (cfg.scores_values.has_value() != (cfg.scores_init == ScoresInit::from_values)) {
      throw ContractError("model config: scores values go with from-values initialisation");
    }
    if (cfg.scores_values && cfg.scores_values->size() != cfg.gate_width()) {
      throw ContractError("model config: scores values length != gate width");
    }
  }
}

// Fixed per-feature affine map (x - shift) / scale applied to raw inputs.
// Empty vectors mean identity.
struct InputNormalization {
  std::vector<double> shift;
  std::vector<double> scale;

  bool identity() const { return shift.empty(); }
};

// Mean and population standard deviation per column; constant columns get scale 1.
inline InputNormalization fit_normalization(const Tensor& x) {
  InputNormalization n;
  n.shift.assign(x.cols(), 0.0);
  n.scale.assign(x.cols(), 1.0);
  if (x.rows() == 0) return n;
  const auto rows = static_cast<double>(x.rows());
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) mean += x(r, c);
    mean /= rows;
    double var = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) var += (x(r, c) - mean) * (x(r, c) - mean);
    const double sd = std::sqrt(var / rows);
    n.shift[c] = mean;
    n.scale[c] = sd > 1e-12 ? sd : 1.0;
  }
  return n;
}

struct Model {
  ModelConfig config;
  std::uint64_t seed = 0;
  std::map<std::string, Tensor> parameters;
  std::optional<ScoresLayer> scores;
  InputNormalization normalization;

  std::size_t parameter_count() const {
    std::size_t n = scores ? scores->size() : 0;
    for (const auto& [name, t] : parameters) n += t.size();
    return n;
  }
};

namespace detail {

inline std::string hidden_name(std::size_t k, const char* what) {
  return "fc" + std::to_string(k) + "." + what;
}

// uniform[-1/sqrt(fan_in), 1/sqrt(fan_in)], one RNG stream per parameter name
// so that gated and vanilla models built from one seed share their weights.
inline Tensor init_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in,
                           std::uint64_t seed, const std::string& name) {
  Rng rng(seed, stream_id(name));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(rows, cols);
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace detail

inline Model build_model(const ModelConfig& config, std::uint64_t seed) {
  validate(config);
  Model m;
  m.config = config;
  m.seed = seed;
  auto add = [&](const std::string& name, std::size_t rows, std::size_t cols, std::size_t fan_in) {
    m.parameters.emplace(name, detail::init_uniform(rows, cols, fan_in, seed, name));
  };
  std::size_t width = config.input_dim;
  if (config.backbone == Backbone::attention) {
    const std::size_t d = config.input_dim;
    const std::size_t dm = config.model_dim;
    add("embed.scale", d, dm, 1);
    add("embed.position", d, dm, 1);
    add("attn.query", dm, dm, dm);
    add("attn.key", dm, dm, dm);
    add("attn.value", dm, dm, dm);
    add("ffn.w1", dm, config.ffn_dim, dm);
    add("ffn.b1", 1, config.ffn_dim, dm);
    add("ffn.w2", config.ffn_dim, dm, config.ffn_dim);
    add("ffn.b2", 1, dm, config.ffn_dim);
    width = dm;
  }
  for (std::size_t k = 0; k < config.hidden_widths.size(); ++k) {
    const std::size_t out = config.hidden_widths[k];
    add(detail::hidden_name(k + 1, "weight"), width, out, width);
    add(detail::hidden_name(k + 1, "bias"), 1, out, width);
    width = out;
  }
  add("head.weight", width, 1, width);
  add("head.bias", 1, 1, width);
  if (config.gated) {
    m.scores = init_scores(config.gate_width(), config.scores_init, seed, config.scores_values);
  }
  return m;
}

// Graph handles for a model's parameters.
struct BoundModel {
  std::map<std::string, autodiff::Var> params;
  std::optional<autodiff::Var> scores;

  autodiff::Var at(const std::string& name) const {
    const auto it = params.find(name);
    if (it == params.end()) throw ContractError("model has no parameter '" + name + "'");
    return it->second;
  }
};

inline BoundModel bind(autodiff::Graph& g, const Model& model, bool requires_grad) {
  BoundModel b;
  for (const auto& [name, t] : model.parameters) b.params.emplace(name, g.leaf(t, requires_grad));
  if (model.scores) b.scores = g.leaf(Tensor::row_vector(model.scores->scores), requires_grad);
  return b;
}

struct AttentionOutput {
  autodiff::Var output;     // d x m
  autodiff::Var attention;  // d x d, rows sum to 1
};

// softmax(Q K^T / sqrt(m)) V with a residual, then a two-layer relu
// feed-forward with a residual.
inline AttentionOutput attention_block(autodiff::Graph& g, autodiff::Var tokens,
                                       const BoundModel& p) {
  const Tensor& t = g.value(tokens);
  const Tensor& wq = g.value(p.at("attn.query"));
  if (t.cols() != wq.rows()) {
    throw DimensionError("attention_block: tokens " + t.shape_string() + " vs model dim " +
                         std::to_string(wq.rows()));
  }
  const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(t.cols()));
  const auto q = g.matmul(tokens, p.at("attn.query"));
  const auto k = g.matmul(tokens, p.at("attn.key"));
  const auto v = g.matmul(tokens, p.at("attn.value"));
  const auto attn = g.softmax_rows(g.scale(g.matmul(q, g.transpose(k)), inv_sqrt_m));
  const auto h = g.add(tokens, g.matmul(attn, v));
  const auto inner = g.relu(g.add(g.matmul(h, p.at("ffn.w1")), p.at("ffn.b1")));
  const auto out = g.add(h, g.add(g.matmul(inner, p.at("ffn.w2")), p.at("ffn.b2")));
  return {out, attn};
}

// Predictions for a b x d batch, shape b x 1.
inline autodiff::Var forward(autodiff::Graph& g, const Model& model, const BoundModel& p,
                             autodiff::Var x) {
  const ModelConfig& cfg = model.config;
  const std::size_t batch = g.value(x).rows();
  if (g.value(x).cols() != cfg.input_dim) {
    throw DimensionError("model expects " + std::to_string(cfg.input_dim) + " features, got " +
                         std::to_string(g.value(x).cols()));
  }
  if (!model.normalization.identity()) {
    if (model.normalization.shift.size() != cfg.input_dim ||
        model.normalization.scale.size() != cfg.input_dim) {
      throw DimensionError("model normalization does not match input dim");
    }
    std::vector<double> neg_shift(cfg.input_dim);
    std::vector<double> inv_scale(cfg.input_dim);
    for (std::size_t i = 0; i < cfg.input_dim; ++i) {
      neg_shift[i] = -model.normalization.shift[i];
      inv_scale[i] = 1.0 / model.normalization.scale[i];
    }
    x = g.hadamard(g.add(x, g.leaf(Tensor::row_vector(neg_shift), false)),
                   g.leaf(Tensor::row_vector(inv_scale), false));
  }
  std::optional<autodiff::Var> gate_weights;
  if (p.scores) gate_weights = g.softmax_rows(*p.scores);
  auto maybe_gate = [&](autodiff::Var h, std::size_t layer) {
    if (gate_weights && cfg.gate_layer == layer) return g.hadamard(h, *gate_weights);
    return h;
  };

  auto h = maybe_gate(x, 0);
  if (cfg.backbone == Backbone::attention) {
    std::vector<autodiff::Var> pooled;
    pooled.reserve(batch);
    for (std::size_t r = 0; r < batch; ++r) {
      const auto column = g.transpose(g.select_row(h, r));
      const auto tokens =
          g.add(g.hadamard(p.at("embed.scale"), column), p.at("embed.position"));
      pooled.push_back(g.mean_rows(attention_block(g, tokens, p).output));
    }
    h = g.concat_rows(pooled);
  }
  for (std::size_t k = 1; k <= cfg.hidden_widths.size(); ++k) {
    h = g.relu(g.add(g.matmul(h, p.at(detail::hidden_name(k, "weight"))),
                     p.at(detail::hidden_name(k, "bias"))));
    h = maybe_gate(h, k);
  }
  return g.sigmoid(g.add(g.matmul(h, p.at("head.weight")), p.at("head.bias")));
}

inline std::vector<double> predict(const Model& model, const Tensor& x) {
  autodiff::Graph g;
  const auto bound = bind(g, model, false);
  const auto out = forward(g, model, bound, g.leaf(x, false));
  return g.value(out).values();
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"input_dim", c.input_dim},
                     {"backbone", to_string(c.backbone)},
                     {"hidden_widths", c.hidden_widths},
                     {"model_dim", c.model_dim},
                     {"ffn_dim", c.ffn_dim},
                     {"gated", c.gated},
                     {"gate_layer", c.gate_layer},
                     {"scores_init", to_string(c.scores_init)}};
  j["scores_values"] = c.scores_values ? nlohmann::json(*c.scores_values) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.backbone = backbone_from_string(j.at("backbone").get<std::string>());
  c.hidden_widths = j.at("hidden_widths").get<std::vector<std::size_t>>();
  c.model_dim = j.at("model_dim").get<std::size_t>();
  c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
  c.gated = j.at("gated").get<bool>();
  c.gate_layer = j.at("gate_layer").get<std::size_t>();
  c.scores_init = scores_init_from_string(j.at("scores_init").get<std::string>());
  c.scores_values.reset();
  if (j.contains("scores_values") && !j["scores_values"].is_null()) {
    c.scores_values = j["scores_values"].get<std::vector<double>>();
  }
}

inline nlohmann::json tensor_to_json(const Tensor& t) {
  return nlohmann::json{{"rows", t.rows()}, {"cols", t.cols()}, {"data", t.values()}};
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                j.at("data").get<std::vector<double>>());
}

inline void to_json(nlohmann::json& j, const Model& m) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, t] : m.parameters) params[name] = tensor_to_json(t);
  j = nlohmann::json{{"config", m.config}, {"seed", m.seed}, {"parameters", params}};
  j["scores"] = m.scores ? nlohmann::json(m.scores->scores) : nlohmann::json(nullptr);
  j["normalization"] = m.normalization.identity()
                           ? nlohmann::json(nullptr)
                           : nlohmann::json{{"shift", m.normalization.shift},
                                            {"scale", m.normalization.scale}};
}

inline void from_json(const nlohmann::json& j, Model& m) {
  m.config = j.at("config").get<ModelConfig>();
  validate(m.config);
  m.seed = j.at("seed").get<std::uint64_t>();
  const Model reference = build_model(m.config, m.seed);
  m.parameters.clear();
  for (const auto& [name, value] : j.at("parameters").items()) {
    Tensor t = tensor_from_json(value);
    const auto it = reference.parameters.find(name);
    if (it == reference.parameters.end()) throw ParseError("model: unexpected parameter " + name);
    if (!it->second.same_shape(t)) throw ParseError("model: wrong shape for parameter " + name);
    m.parameters.emplace(name, std::move(t));
  }
  if (m.parameters.size() != reference.parameters.size()) {
    throw ParseError("model: missing parameters");
  }
  m.scores.reset();
  if (m.config.gated) {
    if (!j.contains("scores") || j["scores"].is_null()) throw ParseError("model: gated but no scores");
    auto s = j["scores"].get<std::vector<double>>();
    if (s.size() != m.config.gate_width()) throw ParseError("model: scores length != gate width");
    m.scores = ScoresLayer{std::move(s), m.config.scores_init};
  }
  m.normalization = {};
  if (j.contains("normalization") && !j["normalization"].is_null()) {
    m.normalization.shift = j["normalization"].at("shift").get<std::vector<double>>();
    m.normalization.scale = j["normalization"].at("scale").get<std::vector<double>>();
    if (m.normalization.shift.size() != m.config.input_dim ||
        m.normalization.scale.size() != m.config.input_dim) {
      throw ParseError("model: normalization length != input dim");
    }
    for (double v : m.normalization.scale)
      if (!(v > 0.0)) throw ParseError("model: normalization scale must be positive");
  }
}

}  // namespace scoregate
