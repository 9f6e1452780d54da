#pragma once

#include "varjepa/autodiff.hpp"
#include "varjepa/tensor.hpp"

namespace varjepa {

inline constexpr double kLogVarMin = -8.0;
inline constexpr double kLogVarMax = 8.0;

/// Diagonal Gaussian over a latent vector. log_var is clamped to
/// [kLogVarMin, kLogVarMax] on construction.
class DiagGaussian {
 public:
  DiagGaussian() = default;
  DiagGaussian(Vector mean, Vector log_var);

  static DiagGaussian standard(Eigen::Index d);

  const Vector& mean() const { return mean_; }
  const Vector& log_var() const { return log_var_; }
  Eigen::Index dim() const { return mean_.size(); }
  Vector stddev() const { return (0.5 * log_var_.array()).exp(); }

  double log_density(const Vector& s) const;

 private:
  Vector mean_;
  Vector log_var_;
};

Vector reparam_sample(const DiagGaussian& g, const Vector& noise);
double kl_to_standard(const DiagGaussian& g);
double kl_diag(const DiagGaussian& q, const DiagGaussian& p);
double gaussian_nll(const Vector& x, const Vector& mean, double variance);
double gaussian_nll(const Vector& x, const Vector& mean, const Vector& variance);
/// -log softmax(logits)[true_class]; InvalidInput when the class is out of range.
double categorical_nll(const Vector& logits, int true_class);

namespace ad {

/// Batched diagonal Gaussian on the tape: mean and log_var are [n x d].
struct GaussVars {
  Var mean;
  Var log_var;
};

/// Split an [n x 2d] head into (mean, clamped log_var).
GaussVars split_gaussian(Var head, Eigen::Index d);
/// mean + exp(log_var / 2) * noise
Var reparam(const GaussVars& g, const Matrix& noise);

}  // namespace ad

}  // namespace varjepa
