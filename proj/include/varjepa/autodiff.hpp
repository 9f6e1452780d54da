#pragma once

#include "varjepa/errors.hpp"
#include "varjepa/tensor.hpp"

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace varjepa::ad {

class Graph;

/// Handle to a node on a Graph tape. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : g_(g), id_(id) {}

  Graph* graph() const { return g_; }
  std::size_t id() const { return id_; }
  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  bool needs_grad() const;

 private:
  Graph* g_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Every node stores its forward value, an accumulated
/// gradient (allocated lazily) and a closure that pushes its gradient to
/// its inputs. Nodes that do not depend on any leaf skip the closure.
class Graph {
 public:
  /// Receives this node's forward value and its accumulated gradient.
  using Backward = std::function<void(Graph&, const Matrix& out, const Matrix& gout)>;

  Graph() { nodes_.reserve(256); }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix v, std::string_view op = "constant");
  Var leaf(Matrix v, bool needs_grad = true);

  /// Append a node. `inputs` decide needs_grad; the value must be finite
  /// or NumericalError is thrown naming `op`.
  Var push(Matrix value, std::string_view op, std::initializer_list<Var> inputs, Backward backward);
  Var push(Matrix value, std::string_view op, const std::vector<Var>& inputs, Backward backward);

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and sweeps the tape backwards.
  void backward(Var root);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  std::string_view op_name(std::size_t id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

  template <typename Expr>
  void accumulate(const Var& v, const Expr& g) {
    Node& n = nodes_[v.id()];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    std::string op;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return g_->value(id_); }
inline const Matrix& Var::grad() const { return g_->grad(id_); }
inline bool Var::needs_grad() const { return g_->needs_grad(id_); }

// ---- structural ----
Var matmul(Var a, Var b);
Var add(Var a, Var b);
/// a [n x m] + row [1 x m] broadcast over rows.
Var add_row(Var a, Var row);
/// a [n x m] * col [n x 1] broadcast over columns.
Var mul_col(Var a, Var col);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// a [n x m] scaled by a learned 1x1 scalar s.
Var mul_scalar(Var a, Var s);

// ---- elementwise ----
Var tanh(Var a);
/// Exact erf form: x * Phi(x).
Var gelu(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
/// Gradient passes only where lo < a < hi.
Var clamp(Var a, double lo, double hi);

// ---- reductions ----
Var sum(Var a);
Var mean(Var a);
/// [n x m] -> [n x 1]
Var row_sum(Var a);
/// [n x m] -> [1 x m]
Var mean_rows(Var a);

// ---- slicing / layout ----
Var cols(Var a, Eigen::Index start, Eigen::Index n);
Var hcat(const std::vector<Var>& parts);
/// Stack K copies of a [n x m] vertically -> [K*n x m].
Var vtile(Var a, Eigen::Index K);
/// [n x (G*d)] -> [n x G], summing each contiguous block of d columns.
Var group_sum(Var a, Eigen::Index d);
Var stop_gradient(Var a);

// ---- fused kernels ----
/// 1/2 (exp(lv) + m^2 - lv - 1), elementwise.
Var kl_std_elem(Var mean, Var log_var);
/// 1/2 (exp(lq - lp) + (mp - mq)^2 exp(-lp) + (lp - lq) - 1), elementwise.
Var kl_diag_elem(Var mq, Var lq, Var mp, Var lp);
/// 1/2 (log 2pi + lv + (x - m)^2 exp(-lv)), elementwise. `log_var` is either
/// 1x1 (broadcast) or the same shape as `mean`.
Var gauss_nll_elem(const Matrix& x, Var mean, Var log_var);
/// Per-group categorical NLL. `logits` is [n x sum(card)], `targets` is
/// [n x G] holding class indices (as doubles). Returns [n x G].
Var categorical_nll_groups(Var logits, const Matrix& targets, const std::vector<int>& cards);

}  // namespace varjepa::ad
