#include "varjepa/gaussian.hpp"

#include "varjepa/errors.hpp"

#include <cmath>
#include <numbers>

namespace varjepa {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

DiagGaussian::DiagGaussian(Vector mean, Vector log_var) : mean_(std::move(mean)), log_var_(std::move(log_var)) {
  if (mean_.size() != log_var_.size()) throw InvalidInput("DiagGaussian: mean/log_var length mismatch");
  log_var_ = log_var_.cwiseMax(kLogVarMin).cwiseMin(kLogVarMax);
}

DiagGaussian DiagGaussian::standard(Eigen::Index d) { return {Vector::Zero(d), Vector::Zero(d)}; }

double DiagGaussian::log_density(const Vector& s) const {
  if (s.size() != dim()) throw InvalidInput("log_density: dim mismatch");
  const auto r = s.array() - mean_.array();
  return -0.5 * ((kLog2Pi + log_var_.array()) + r.square() * (-log_var_.array()).exp()).sum();
}

Vector reparam_sample(const DiagGaussian& g, const Vector& noise) {
  if (noise.size() != g.dim()) throw InvalidInput("reparam_sample: noise length mismatch");
  return g.mean().array() + (0.5 * g.log_var().array()).exp() * noise.array();
}

// Element formulas mirror ad::kl_std_elem / ad::kl_diag_elem term for term,
// so kl_diag(q, standard) reproduces kl_to_standard(q) bit for bit.
double kl_to_standard(const DiagGaussian& g) {
  const auto m = g.mean().array();
  const auto l = g.log_var().array();
  return (0.5 * (((l.exp() + m.square()) - l) - 1.0)).sum();
}

double kl_diag(const DiagGaussian& q, const DiagGaussian& p) {
  if (q.dim() != p.dim()) throw InvalidInput("kl_diag: dim mismatch");
  const auto mq = q.mean().array();
  const auto a = q.log_var().array();
  const auto mp = p.mean().array();
  const auto b = p.log_var().array();
  return (0.5 * ((((a - b).exp() + (mp - mq).square() * (-b).exp()) + (b - a)) - 1.0)).sum();
}

double gaussian_nll(const Vector& x, const Vector& mean, double variance) {
  return gaussian_nll(x, mean, Vector::Constant(x.size(), variance));
}

double gaussian_nll(const Vector& x, const Vector& mean, const Vector& variance) {
  if (x.size() != mean.size() || x.size() != variance.size()) throw InvalidInput("gaussian_nll: length mismatch");
  if ((variance.array() <= 0.0).any()) throw InvalidInput("gaussian_nll: variance must be > 0");
  const auto r = x.array() - mean.array();
  return (0.5 * ((kLog2Pi + variance.array().log()) + r.square() / variance.array())).sum();
}

double categorical_nll(const Vector& logits, int true_class) {
  if (true_class < 0 || true_class >= logits.size()) throw InvalidInput("categorical_nll: class index out of range");
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return lse - logits(true_class);
}

namespace ad {

GaussVars split_gaussian(Var head, Eigen::Index d) {
  if (head.cols() != 2 * d) throw InvalidInput("split_gaussian: head width must be 2d");
  return {cols(head, 0, d), clamp(cols(head, d, d), kLogVarMin, kLogVarMax)};
}

Var reparam(const GaussVars& g, const Matrix& noise) {
  if (noise.rows() != g.mean.rows() || noise.cols() != g.mean.cols()) throw InvalidInput("reparam: noise shape mismatch");
  Graph* gr = g.mean.graph();
  Var sd = exp(scale(g.log_var, 0.5));
  return add(g.mean, mul(sd, gr->constant(noise)));
}

}  // namespace ad

}  // namespace varjepa
