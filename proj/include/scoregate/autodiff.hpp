#pragma once

// Define-by-run reverse-mode differentiation over dense 2-D tensors.
//
// Every operation is evaluated eagerly when it is added to a Graph, so node
// insertion order is a valid topological order. forward() re-evaluates the
// whole graph after leaf values change (used by grad_check), and backward()
// fills gradients for every node that depends on a leaf created with
// requires_grad = true.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "scoregate/error.hpp"
#include "scoregate/tensor.hpp"

namespace scoregate::autodiff {

enum class Op {
  leaf,
  matmul,
  add,
  hadamard,
  softmax_rows,
  sigmoid,
  relu,
  mean,
  bce_loss,
  mse_loss,
  scale,
  transpose,
  mean_rows,
  concat_rows,
  select_row,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::hadamard: return "hadamard";
    case Op::softmax_rows: return "softmax-rows";
    case Op::sigmoid: return "sigmoid";
    case Op::relu: return "relu";
    case Op::mean: return "mean";
    case Op::bce_loss: return "bce-loss";
    case Op::mse_loss: return "mse-loss";
    case Op::scale: return "scale";
    case Op::transpose: return "transpose";
    case Op::mean_rows: return "mean-rows";
    case Op::concat_rows: return "concat-rows";
    case Op::select_row: return "select-row";
  }
  return "?";
}

// Predictions are clipped into [kBceClip, 1 - kBceClip] before taking logs.
inline constexpr double kBceClip = 1e-12;

// Handle to a node inside one Graph.
struct Var {
  std::size_t id = 0;
};

namespace detail {

enum class Broadcast { same, row, column };

// How the second operand of an elementwise op lines up with the first:
// identical shape, a 1xC row repeated over rows, or an Rx1 column repeated
// over columns.
inline Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.same_shape(b)) return Broadcast::same;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::column;
  throw DimensionError(std::string(op) + ": cannot combine " + a.shape_string() + " with " +
                       b.shape_string());
}

inline std::size_t broadcast_index(Broadcast kind, std::size_t r, std::size_t c,
                                   std::size_t cols) {
  switch (kind) {
    case Broadcast::same: return r * cols + c;
    case Broadcast::row: return c;
    case Broadcast::column: return r;
  }
  return 0;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + a.shape_string() + " times " + b.shape_string());
  }
  Tensor out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

// a^T * b without materialising the transpose.
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  Tensor out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aki * b(k, j);
    }
  }
  return out;
}

// a * b^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(j, k);
      out(i, j) = acc;
    }
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  Tensor out(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
  return out;
}

// Row-wise softmax with max subtraction.
inline Tensor softmax_rows(const Tensor& a) {
  Tensor out(a.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto in = a.row(r);
    auto dst = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      dst[c] = std::exp(in[c] - mx);
      total += dst[c];
    }
    for (double& v : dst) v /= total;
  }
  return out;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double clip_probability(double p) { return std::clamp(p, kBceClip, 1.0 - kBceClip); }

}  // namespace detail

class Graph {
 public:
  Var leaf(Tensor value, bool requires_grad = true) {
    Node n;
    n.op = Op::leaf;
    n.needs_grad = requires_grad;
    n.value = std::move(value);
    if (!n.value.all_finite()) throw NumericError("leaf: non-finite value");
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var matmul(Var a, Var b) { return push(Op::matmul, {a, b}); }
  // b may be the same shape as a, a 1xC row or an Rx1 column.
  Var add(Var a, Var b) { return push(Op::add, {a, b}); }
  Var hadamard(Var a, Var b) { return push(Op::hadamard, {a, b}); }
  Var softmax_rows(Var a) { return push(Op::softmax_rows, {a}); }
  Var sigmoid(Var a) { return push(Op::sigmoid, {a}); }
  Var relu(Var a) { return push(Op::relu, {a}); }
  // Mean over every entry, 1x1 result.
  Var mean(Var a) { return push(Op::mean, {a}); }
  Var bce_loss(Var pred, Var target) { return push(Op::bce_loss, {pred, target}); }
  Var mse_loss(Var pred, Var target) { return push(Op::mse_loss, {pred, target}); }
  Var scale(Var a, double factor) { return push(Op::scale, {a}, factor); }
  Var transpose(Var a) { return push(Op::transpose, {a}); }
  // Column means, 1xC result.
  Var mean_rows(Var a) { return push(Op::mean_rows, {a}); }
  Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat-rows: no inputs");
    return push(Op::concat_rows, std::vector<Var>(parts.begin(), parts.end()));
  }
  Var select_row(Var a, std::size_t row) {
    return push(Op::select_row, {a}, 0.0, row);
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
  Op op(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Replaces a leaf value; the shape must not change. Call forward() afterwards.
  void set_value(Var v, Tensor value) {
    Node& n = nodes_.at(v.id);
    if (n.op != Op::leaf) throw ContractError("set_value: node is not a leaf");
    if (!n.value.same_shape(value)) {
      throw DimensionError("set_value: shape " + value.shape_string() + " != " +
                           n.value.shape_string());
    }
    n.value = std::move(value);
  }

  // Re-evaluates every non-leaf node in insertion order.
  void forward() {
    for (Node& n : nodes_) {
      if (n.op != Op::leaf) n.value = evaluate(n);
    }
  }

  void zero_grad() {
    for (Node& n : nodes_) n.grad = Tensor(n.value.rows(), n.value.cols());
  }

  // Gradients of a scalar node with respect to every node it depends on.
  // Existing gradients are reset first, so repeated calls give the same result.
  void backward(Var loss) {
    const Node& root = nodes_.at(loss.id);
    if (root.value.rows() != 1 || root.value.cols() != 1) {
      throw ContractError("backward: loss must be 1x1, got " + root.value.shape_string());
    }
    zero_grad();
    nodes_[loss.id].grad[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      const Node& n = nodes_[i];
      if (n.op == Op::leaf || !n.needs_grad) continue;
      propagate(n);
    }
  }

 private:
  struct Node {
    Op op = Op::leaf;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    double factor = 0.0;
    std::size_t index = 0;
    bool needs_grad = false;
  };

  Var push(Op op, std::vector<Var> inputs, double factor = 0.0, std::size_t index = 0) {
    Node n;
    n.op = op;
    n.factor = factor;
    n.index = index;
    for (Var v : inputs) {
      if (v.id >= nodes_.size()) throw ContractError("graph: dangling node reference");
      n.inputs.push_back(v.id);
      n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
    }
    n.value = evaluate(n);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  const Tensor& in(const Node& n, std::size_t k) const { return nodes_[n.inputs[k]].value; }

  Tensor evaluate(const Node& n) const {
    Tensor out = compute(n);
    if (!out.all_finite()) {
      throw NumericError(std::string(op_name(n.op)) + ": non-finite result");
    }
    return out;
  }

  Tensor compute(const Node& n) const {
    switch (n.op) {
      case Op::leaf:
        return n.value;
      case Op::matmul:
        return detail::matmul(in(n, 0), in(n, 1));
      case Op::add:
      case Op::hadamard: {
        const Tensor& a = in(n, 0);
        const Tensor& b = in(n, 1);
        const auto kind = detail::broadcast_kind(a, b, op_name(n.op));
        Tensor out(a.rows(), a.cols());
        for (std::size_t r = 0; r < a.rows(); ++r) {
          for (std::size_t c = 0; c < a.cols(); ++c) {
            const double bv = b[detail::broadcast_index(kind, r, c, a.cols())];
            out(r, c) = n.op == Op::add ? a(r, c) + bv : a(r, c) * bv;
          }
        }
        return out;
      }
      case Op::softmax_rows:
        return detail::softmax_rows(in(n, 0));
      case Op::sigmoid: {
        Tensor out = in(n, 0);
        for (double& v : out.data()) v = detail::sigmoid(v);
        return out;
      }
      case Op::relu: {
        Tensor out = in(n, 0);
        for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
        return out;
      }
      case Op::mean: {
        const Tensor& a = in(n, 0);
        if (a.empty()) throw DimensionError("mean: empty tensor");
        double total = 0.0;
        for (double v : a.data()) total += v;
        return Tensor(1, 1, total / static_cast<double>(a.size()));
      }
      case Op::bce_loss: {
        const Tensor& p = in(n, 0);
        const Tensor& t = in(n, 1);
        require_same_shape(p, t, "bce-loss");
        double total = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
          if (t[i] != 0.0 && t[i] != 1.0) {
            throw ContractError("bce-loss: target " + std::to_string(t[i]) + " is not 0 or 1");
          }
          const double pc = detail::clip_probability(p[i]);
          total -= t[i] == 1.0 ? std::log(pc) : std::log(1.0 - pc);
        }
        return Tensor(1, 1, total / static_cast<double>(p.size()));
      }
      case Op::mse_loss: {
        const Tensor& p = in(n, 0);
        const Tensor& t = in(n, 1);
        require_same_shape(p, t, "mse-loss");
        double total = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) total += (p[i] - t[i]) * (p[i] - t[i]);
        return Tensor(1, 1, total / static_cast<double>(p.size()));
      }
      case Op::scale: {
        Tensor out = in(n, 0);
        for (double& v : out.data()) v *= n.factor;
        return out;
      }
      case Op::transpose:
        return detail::transpose(in(n, 0));
      case Op::mean_rows: {
        const Tensor& a = in(n, 0);
        if (a.rows() == 0) throw DimensionError("mean-rows: no rows");
        Tensor out(1, a.cols());
        for (std::size_t r = 0; r < a.rows(); ++r)
          for (std::size_t c = 0; c < a.cols(); ++c) out(0, c) += a(r, c);
        for (double& v : out.data()) v /= static_cast<double>(a.rows());
        return out;
      }
      case Op::concat_rows: {
        const std::size_t cols = in(n, 0).cols();
        std::vector<double> data;
        std::size_t rows = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const Tensor& part = in(n, k);
          if (part.cols() != cols) {
            throw DimensionError("concat-rows: column mismatch " + part.shape_string());
          }
          data.insert(data.end(), part.data().begin(), part.data().end());
          rows += part.rows();
        }
        return Tensor(rows, cols, std::move(data));
      }
      case Op::select_row: {
        const Tensor& a = in(n, 0);
        if (n.index >= a.rows()) throw DimensionError("select-row: row out of range");
        return Tensor::row_vector(a.row(n.index));
      }
    }
    throw ContractError("unknown op");
  }

  static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
      throw DimensionError(std::string(op) + ": " + a.shape_string() + " vs " + b.shape_string());
    }
  }

  bool wants(const Node& n, std::size_t k) const { return nodes_[n.inputs[k]].needs_grad; }
  Tensor& grad_of(const Node& n, std::size_t k) { return nodes_[n.inputs[k]].grad; }

  void propagate(const Node& n) {
    const Tensor& dy = n.grad;
    switch (n.op) {
      case Op::leaf:
        return;
      case Op::matmul: {
        if (wants(n, 0)) accumulate(grad_of(n, 0), detail::matmul_nt(dy, in(n, 1)));
        if (wants(n, 1)) accumulate(grad_of(n, 1), detail::matmul_tn(in(n, 0), dy));
        return;
      }
      case Op::add:
      case Op::hadamard: {
        const Tensor& a = in(n, 0);
        const Tensor& b = in(n, 1);
        const auto kind = detail::broadcast_kind(a, b, op_name(n.op));
        const bool is_add = n.op == Op::add;
        if (wants(n, 0)) {
          Tensor& da = grad_of(n, 0);
          for (std::size_t r = 0; r < a.rows(); ++r)
            for (std::size_t c = 0; c < a.cols(); ++c)
              da(r, c) += is_add ? dy(r, c)
                                 : dy(r, c) * b[detail::broadcast_index(kind, r, c, a.cols())];
        }
        if (wants(n, 1)) {
          Tensor& db = grad_of(n, 1);
          for (std::size_t r = 0; r < a.rows(); ++r)
            for (std::size_t c = 0; c < a.cols(); ++c)
              db[detail::broadcast_index(kind, r, c, a.cols())] +=
                  is_add ? dy(r, c) : dy(r, c) * a(r, c);
        }
        return;
      }
      case Op::softmax_rows: {
        if (!wants(n, 0)) return;
        Tensor& dx = grad_of(n, 0);
        const Tensor& y = n.value;
        for (std::size_t r = 0; r < y.rows(); ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < y.cols(); ++c) dot += dy(r, c) * y(r, c);
          for (std::size_t c = 0; c < y.cols(); ++c) dx(r, c) += y(r, c) * (dy(r, c) - dot);
        }
        return;
      }
      case Op::sigmoid: {
        if (!wants(n, 0)) return;
        Tensor& dx = grad_of(n, 0);
        for (std::size_t i = 0; i < dy.size(); ++i) {
          const double y = n.value[i];
          dx[i] += dy[i] * y * (1.0 - y);
        }
        return;
      }
      case Op::relu: {
        if (!wants(n, 0)) return;
        Tensor& dx = grad_of(n, 0);
        const Tensor& x = in(n, 0);
        for (std::size_t i = 0; i < dy.size(); ++i)
          if (x[i] > 0.0) dx[i] += dy[i];
        return;
      }
      case Op::mean: {
        if (!wants(n, 0)) return;
        Tensor& dx = grad_of(n, 0);
        const double g = dy[0] / static_cast<double>(dx.size());
        for (double& v : dx.data()) v += g;
        return;
      }
      case Op::bce_loss: {
        const Tensor& p = in(n, 0);
        const Tensor& t = in(n, 1);
        const double inv_n = dy[0] / static_cast<double>(p.size());
        if (wants(n, 0)) {
          Tensor& dp = grad_of(n, 0);
          for (std::size_t i = 0; i < p.size(); ++i) {
            if (p[i] < kBceClip || p[i] > 1.0 - kBceClip) continue;
            dp[i] += inv_n * (p[i] - t[i]) / (p[i] * (1.0 - p[i]));
          }
        }
        if (wants(n, 1)) {
          Tensor& dt = grad_of(n, 1);
          for (std::size_t i = 0; i < p.size(); ++i) {
            const double pc = detail::clip_probability(p[i]);
            dt[i] += inv_n * (std::log(1.0 - pc) - std::log(pc));
          }
        }
        return;
      }
      case Op::mse_loss: {
        const Tensor& p = in(n, 0);
        const Tensor& t = in(n, 1);
        const double k = 2.0 * dy[0] / static_cast<double>(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double g = k * (p[i] - t[i]);
          if (wants(n, 0)) grad_of(n, 0)[i] += g;
          if (wants(n, 1)) grad_of(n, 1)[i] -= g;
        }
        return;
      }
      case Op::scale: {
        if (!wants(n, 0)) return;
        Tensor& dx = grad_of(n, 0);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += n.factor * dy[i];
        return;
      }
      case Op::transpose: {
        if (wants(n, 0)) accumulate(grad_of(n, 0), detail::transpose(dy));
        return;
      }
      case Op::mean_rows: {
        if (!wants(n, 0)) return;
        Tensor& dx = grad_of(n, 0);
        const double inv = 1.0 / static_cast<double>(dx.rows());
        for (std::size_t r = 0; r < dx.rows(); ++r)
          for (std::size_t c = 0; c < dx.cols(); ++c) dx(r, c) += dy(0, c) * inv;
        return;
      }
      case Op::concat_rows: {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const std::size_t len = in(n, k).size();
          if (wants(n, k)) {
            Tensor& dx = grad_of(n, k);
            for (std::size_t i = 0; i < len; ++i) dx[i] += dy[offset + i];
          }
          offset += len;
        }
        return;
      }
      case Op::select_row: {
        if (!wants(n, 0)) return;
        auto dst = grad_of(n, 0).row(n.index);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += dy[c];
        return;
      }
    }
  }

  static void accumulate(Tensor& into, const Tensor& delta) {
    for (std::size_t i = 0; i < into.size(); ++i) into[i] += delta[i];
  }

  std::vector<Node> nodes_;
};

// Largest relative disagreement between the analytic gradient of `loss` with
// respect to `leaf` and a central finite difference with step `eps`:
//   max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, 1e-12)
// Leaves the graph evaluated at the original leaf value.
inline double grad_check(Graph& graph, Var loss, Var leaf, double eps) {
  if (!(eps > 0.0)) throw ContractError("grad_check: eps must be positive");
  graph.backward(loss);
  const Tensor analytic = graph.grad(leaf);
  const Tensor base = graph.value(leaf);
  double worst = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    Tensor probe = base;
    probe[i] = base[i] + eps;
    graph.set_value(leaf, probe);
    graph.forward();
    const double up = graph.value(loss)[0];
    probe[i] = base[i] - eps;
    graph.set_value(leaf, probe);
    graph.forward();
    const double down = graph.value(loss)[0];
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  graph.set_value(leaf, base);
  graph.forward();
  return worst;
}

}  // namespace scoregate::autodiff
