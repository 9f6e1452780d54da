#include "varjepa/autodiff.hpp"

#include <cmath>
#include <numbers>

namespace varjepa::ad {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)

void require(bool ok, const char* what) {
  if (!ok) throw InvalidInput(what);
}

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidInput(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                       std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                       std::to_string(b.cols()) + ")");
  }
}

template <typename Inputs>
bool any_needs_grad(const Inputs& inputs) {
  for (const Var& v : inputs) {
    if (v.needs_grad()) return true;
  }
  return false;
}

}  // namespace

Var Graph::constant(Matrix v, std::string_view op) { return push(std::move(v), op, std::vector<Var>{}, nullptr); }

Var Graph::leaf(Matrix v, bool needs_grad) {
  Var out = push(std::move(v), "leaf", std::vector<Var>{}, nullptr);
  nodes_[out.id()].needs_grad = needs_grad;
  return out;
}

Var Graph::push(Matrix value, std::string_view op, std::initializer_list<Var> inputs, Backward backward) {
  return push(std::move(value), op, std::vector<Var>(inputs), std::move(backward));
}

Var Graph::push(Matrix value, std::string_view op, const std::vector<Var>& inputs, Backward backward) {
  if (!value.allFinite()) {
    throw NumericalError("non-finite value produced by primitive '" + std::string(op) + "'");
  }
  Node n;
  n.value = std::move(value);
  n.needs_grad = any_needs_grad(inputs);
  n.op = std::string(op);
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Graph::backward(Var root) {
  require(root.rows() == 1 && root.cols() == 1, "backward: root must be a scalar");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[root.id()].needs_grad) return;
  nodes_[root.id()].grad = Matrix::Ones(1, 1);
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    if (!n.grad.allFinite()) {
      throw NumericalError("non-finite gradient reaching primitive '" + n.op + "'");
    }
    n.backward(*this, n.value, n.grad);
  }
}

// ---- structural ----

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Matrix v = a.value() * b.value();
  return a.graph()->push(std::move(v), "matmul", {a, b}, [a, b](Graph& g, const Matrix&, const Matrix& go) {
    if (a.needs_grad()) g.accumulate(a, go * b.value().transpose());
    if (b.needs_grad()) g.accumulate(b, a.value().transpose() * go);
  });
}

Var add(Var a, Var b) {
  require_same(a, b, "add");
  return a.graph()->push(a.value() + b.value(), "add", {a, b}, [a, b](Graph& g, const Matrix&, const Matrix& go) {
    g.accumulate(a, go);
    g.accumulate(b, go);
  });
}

Var add_row(Var a, Var row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: shape mismatch");
  Matrix v = a.value().rowwise() + row.value().row(0);
  return a.graph()->push(std::move(v), "add_row", {a, row}, [a, row](Graph& g, const Matrix&, const Matrix& go) {
    g.accumulate(a, go);
    if (row.needs_grad()) g.accumulate(row, go.colwise().sum());
  });
}

Var mul_col(Var a, Var col) {
  require(col.cols() == 1 && col.rows() == a.rows(), "mul_col: shape mismatch");
  Matrix v = a.value().array().colwise() * col.value().col(0).array();
  return a.graph()->push(std::move(v), "mul_col", {a, col}, [a, col](Graph& g, const Matrix&, const Matrix& go) {
    if (a.needs_grad()) {
      Matrix ga = go.array().colwise() * col.value().col(0).array();
      g.accumulate(a, ga);
    }
    if (col.needs_grad()) {
      Matrix gc = (go.array() * a.value().array()).rowwise().sum();
      g.accumulate(col, gc);
    }
  });
}

Var sub(Var a, Var b) {
  require_same(a, b, "sub");
  return a.graph()->push(a.value() - b.value(), "sub", {a, b}, [a, b](Graph& g, const Matrix&, const Matrix& go) {
    g.accumulate(a, go);
    if (b.needs_grad()) g.accumulate(b, -go);
  });
}

Var mul(Var a, Var b) {
  require_same(a, b, "mul");
  Matrix v = a.value().cwiseProduct(b.value());
  return a.graph()->push(std::move(v), "mul", {a, b}, [a, b](Graph& g, const Matrix&, const Matrix& go) {
    if (a.needs_grad()) g.accumulate(a, go.cwiseProduct(b.value()));
    if (b.needs_grad()) g.accumulate(b, go.cwiseProduct(a.value()));
  });
}

Var scale(Var a, double s) {
  return a.graph()->push(a.value() * s, "scale", {a},
                         [a, s](Graph& g, const Matrix&, const Matrix& go) { g.accumulate(a, go * s); });
}

Var add_scalar(Var a, double s) {
  Matrix v = a.value().array() + s;
  return a.graph()->push(std::move(v), "add_scalar", {a},
                         [a](Graph& g, const Matrix&, const Matrix& go) { g.accumulate(a, go); });
}

Var mul_scalar(Var a, Var s) {
  require(s.rows() == 1 && s.cols() == 1, "mul_scalar: s must be 1x1");
  const double sv = s.scalar();
  return a.graph()->push(a.value() * sv, "mul_scalar", {a, s}, [a, s, sv](Graph& g, const Matrix&, const Matrix& go) {
    if (a.needs_grad()) g.accumulate(a, go * sv);
    if (s.needs_grad()) g.accumulate(s, Matrix::Constant(1, 1, go.cwiseProduct(a.value()).sum()));
  });
}

// ---- elementwise ----

Var tanh(Var a) {
  Matrix v = a.value().array().tanh();
  return a.graph()->push(std::move(v), "tanh", {a}, [a](Graph& g, const Matrix& out, const Matrix& go) {
    Matrix ga = go.array() * (1.0 - out.array().square());
    g.accumulate(a, ga);
  });
}

Var gelu(Var a) {
  const Matrix& x = a.value();
  Matrix cdf(x.rows(), x.cols());
  const double* px = x.data();
  double* pc = cdf.data();
  for (Eigen::Index i = 0; i < x.size(); ++i) pc[i] = 0.5 * (1.0 + std::erf(px[i] * std::numbers::sqrt2 * 0.5));
  Matrix v = x.cwiseProduct(cdf);
  return a.graph()->push(std::move(v), "gelu", {a},
                         [a, cdf = std::move(cdf)](Graph& g, const Matrix&, const Matrix& go) {
                           const auto xa = a.value().array();
                           const double k = 1.0 / std::sqrt(2.0 * std::numbers::pi);
                           Matrix d = cdf.array() + xa * k * (-0.5 * xa.square()).exp();
                           g.accumulate(a, go.cwiseProduct(d));
                         });
}

Var exp(Var a) {
  Matrix v = a.value().array().exp();
  return a.graph()->push(std::move(v), "exp", {a}, [a](Graph& g, const Matrix& out, const Matrix& go) {
    g.accumulate(a, go.cwiseProduct(out));
  });
}

Var log(Var a) {
  if ((a.value().array() <= 0.0).any()) throw NumericalError("non-finite value produced by primitive 'log'");
  Matrix v = a.value().array().log();
  return a.graph()->push(std::move(v), "log", {a}, [a](Graph& g, const Matrix&, const Matrix& go) {
    g.accumulate(a, go.cwiseQuotient(a.value()));
  });
}

Var square(Var a) {
  Matrix v = a.value().array().square();
  return a.graph()->push(std::move(v), "square", {a}, [a](Graph& g, const Matrix&, const Matrix& go) {
    g.accumulate(a, 2.0 * go.cwiseProduct(a.value()));
  });
}

Var clamp(Var a, double lo, double hi) {
  Matrix v = a.value().cwiseMax(lo).cwiseMin(hi);
  return a.graph()->push(std::move(v), "clamp", {a}, [a, lo, hi](Graph& g, const Matrix&, const Matrix& go) {
    const auto x = a.value().array();
    Matrix ga = ((x > lo) && (x < hi)).select(go.array(), 0.0);
    g.accumulate(a, ga);
  });
}

// ---- reductions ----

Var sum(Var a) {
  return a.graph()->push(Matrix::Constant(1, 1, a.value().sum()), "sum", {a},
                         [a](Graph& g, const Matrix&, const Matrix& go) {
                           g.accumulate(a, Matrix::Constant(a.rows(), a.cols(), go(0, 0)));
                         });
}

Var mean(Var a) {
  require(a.value().size() > 0, "mean: empty input");
  const double n = static_cast<double>(a.value().size());
  return a.graph()->push(Matrix::Constant(1, 1, a.value().sum() / n), "mean", {a},
                         [a, n](Graph& g, const Matrix&, const Matrix& go) {
                           g.accumulate(a, Matrix::Constant(a.rows(), a.cols(), go(0, 0) / n));
                         });
}

Var row_sum(Var a) {
  Matrix v = a.value().rowwise().sum();
  return a.graph()->push(std::move(v), "row_sum", {a}, [a](Graph& g, const Matrix&, const Matrix& go) {
    Matrix ga = go.col(0).replicate(1, a.cols());
    g.accumulate(a, ga);
  });
}

Var mean_rows(Var a) {
  require(a.rows() > 0, "mean_rows: empty input");
  const double n = static_cast<double>(a.rows());
  Matrix v = a.value().colwise().sum() / n;
  return a.graph()->push(std::move(v), "mean_rows", {a}, [a, n](Graph& g, const Matrix&, const Matrix& go) {
    Matrix ga = (go / n).replicate(a.rows(), 1);
    g.accumulate(a, ga);
  });
}

// ---- slicing / layout ----

Var cols(Var a, Eigen::Index start, Eigen::Index n) {
  require(start >= 0 && n >= 0 && start + n <= a.cols(), "cols: range out of bounds");
  Matrix v = a.value().middleCols(start, n);
  return a.graph()->push(std::move(v), "cols", {a}, [a, start, n](Graph& g, const Matrix&, const Matrix& go) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    ga.middleCols(start, n) = go;
    g.accumulate(a, ga);
  });
}

Var hcat(const std::vector<Var>& parts) {
  require(!parts.empty(), "hcat: no inputs");
  const Eigen::Index n = parts.front().rows();
  Eigen::Index total = 0;
  for (const Var& p : parts) {
    require(p.rows() == n, "hcat: row count mismatch");
    total += p.cols();
  }
  Matrix v(n, total);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  return parts.front().graph()->push(std::move(v), "hcat", parts, [parts](Graph& g, const Matrix&, const Matrix& go) {
    Eigen::Index o = 0;
    for (const Var& p : parts) {
      if (p.needs_grad()) g.accumulate(p, go.middleCols(o, p.cols()));
      o += p.cols();
    }
  });
}

Var vtile(Var a, Eigen::Index K) {
  require(K >= 1, "vtile: K must be >= 1");
  Matrix v = a.value().replicate(K, 1);
  return a.graph()->push(std::move(v), "vtile", {a}, [a, K](Graph& g, const Matrix&, const Matrix& go) {
    const Eigen::Index n = a.rows();
    Matrix ga = go.topRows(n);
    for (Eigen::Index k = 1; k < K; ++k) ga += go.middleRows(k * n, n);
    g.accumulate(a, ga);
  });
}

Var group_sum(Var a, Eigen::Index d) {
  require(d >= 1 && a.cols() % d == 0, "group_sum: columns not divisible by group width");
  const Eigen::Index G = a.cols() / d;
  Matrix v(a.rows(), G);
  for (Eigen::Index j = 0; j < G; ++j) v.col(j) = a.value().middleCols(j * d, d).rowwise().sum();
  return a.graph()->push(std::move(v), "group_sum", {a}, [a, d, G](Graph& g, const Matrix&, const Matrix& go) {
    Matrix ga(a.rows(), a.cols());
    for (Eigen::Index j = 0; j < G; ++j) ga.middleCols(j * d, d) = go.col(j).replicate(1, d);
    g.accumulate(a, ga);
  });
}

Var stop_gradient(Var a) { return a.graph()->constant(a.value(), "stop_gradient"); }

// ---- fused kernels ----

Var kl_std_elem(Var m, Var lv) {
  require_same(m, lv, "kl_std_elem");
  const auto ma = m.value().array();
  const auto la = lv.value().array();
  Matrix v = 0.5 * (((la.exp() + ma.square()) - la) - 1.0);
  return m.graph()->push(std::move(v), "kl_std", {m, lv}, [m, lv](Graph& g, const Matrix&, const Matrix& go) {
    if (m.needs_grad()) g.accumulate(m, go.cwiseProduct(m.value()));
    if (lv.needs_grad()) {
      Matrix gl = go.array() * 0.5 * (lv.value().array().exp() - 1.0);
      g.accumulate(lv, gl);
    }
  });
}

Var kl_diag_elem(Var mq, Var lq, Var mp, Var lp) {
  require_same(mq, lq, "kl_diag_elem");
  require_same(mq, mp, "kl_diag_elem");
  require_same(mq, lp, "kl_diag_elem");
  const auto q = mq.value().array();
  const auto a = lq.value().array();
  const auto p = mp.value().array();
  const auto b = lp.value().array();
  Matrix v = 0.5 * ((((a - b).exp() + (p - q).square() * (-b).exp()) + (b - a)) - 1.0);
  return mq.graph()->push(std::move(v), "kl_diag", {mq, lq, mp, lp},
                          [mq, lq, mp, lp](Graph& g, const Matrix&, const Matrix& go) {
                            const auto q = mq.value().array();
                            const auto a = lq.value().array();
                            const auto p = mp.value().array();
                            const auto b = lp.value().array();
                            const Array ib = (-b).exp();
                            const Array diff = p - q;
                            const Array r = (a - b).exp();
                            const auto gg = go.array();
                            if (mq.needs_grad()) g.accumulate(mq, Matrix(-gg * diff * ib));
                            if (mp.needs_grad()) g.accumulate(mp, Matrix(gg * diff * ib));
                            if (lq.needs_grad()) g.accumulate(lq, Matrix(gg * 0.5 * (r - 1.0)));
                            if (lp.needs_grad()) g.accumulate(lp, Matrix(gg * 0.5 * (1.0 - r - diff.square() * ib)));
                          });
}

Var gauss_nll_elem(const Matrix& x, Var mean, Var log_var) {
  require(x.rows() == mean.rows() && x.cols() == mean.cols(), "gauss_nll: x/mean shape mismatch");
  const bool broadcast = log_var.rows() == 1 && log_var.cols() == 1;
  require(broadcast || (log_var.rows() == mean.rows() && log_var.cols() == mean.cols()),
          "gauss_nll: log_var must be 1x1 or match mean");
  Array lv = broadcast ? Array::Constant(x.rows(), x.cols(), log_var.scalar())
                                 : Array(log_var.value().array());
  Array r = x.array() - mean.value().array();
  Array iv = (-lv).exp();
  Matrix v = 0.5 * ((kLog2Pi + lv) + r.square() * iv);
  return mean.graph()->push(
      std::move(v), "gauss_nll", {mean, log_var},
      [mean, log_var, broadcast, r = std::move(r), iv = std::move(iv)](Graph& g, const Matrix&, const Matrix& go) {
        const auto gg = go.array();
        if (mean.needs_grad()) g.accumulate(mean, Matrix(-gg * r * iv));
        if (log_var.needs_grad()) {
          Array gl = gg * 0.5 * (1.0 - r.square() * iv);
          if (broadcast) {
            g.accumulate(log_var, Matrix::Constant(1, 1, gl.sum()));
          } else {
            g.accumulate(log_var, Matrix(gl));
          }
        }
      });
}

Var categorical_nll_groups(Var logits, const Matrix& targets, const std::vector<int>& cards) {
  const Eigen::Index G = static_cast<Eigen::Index>(cards.size());
  require(targets.cols() == G && targets.rows() == logits.rows(), "categorical_nll: target shape mismatch");
  Eigen::Index total = 0;
  for (int c : cards) total += c;
  require(total == logits.cols(), "categorical_nll: logit width mismatch");
  const Eigen::Index n = logits.rows();
  Matrix v(n, G);
  Matrix soft(n, total);  // softmax minus one-hot, reused in backward
  const Matrix& L = logits.value();
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index off = 0;
    for (Eigen::Index j = 0; j < G; ++j) {
      const int c = cards[j];
      const double t = targets(i, j);
      const auto k = static_cast<Eigen::Index>(t);
      if (!(t >= 0.0) || k >= c || static_cast<double>(k) != t) throw InvalidInput("categorical_nll: class index out of range");
      const auto row = L.row(i).segment(off, c);
      const double mx = row.maxCoeff();
      const Eigen::RowVectorXd e = (row.array() - mx).exp();
      const double se = e.sum();
      v(i, j) = (mx + std::log(se)) - row(k);
      soft.row(i).segment(off, c) = e / se;
      soft(i, off + k) -= 1.0;
      off += c;
    }
  }
  return logits.graph()->push(std::move(v), "categorical_nll", {logits},
                              [logits, cards, soft = std::move(soft)](Graph& g, const Matrix&, const Matrix& go) {
                                Matrix gl(soft.rows(), soft.cols());
                                Eigen::Index off = 0;
                                for (std::size_t j = 0; j < cards.size(); ++j) {
                                  const int c = cards[j];
                                  gl.middleCols(off, c) =
                                      soft.middleCols(off, c).array().colwise() * go.col(static_cast<Eigen::Index>(j)).array();
                                  off += c;
                                }
                                g.accumulate(logits, gl);
                              });
}

}  // namespace varjepa::ad
