#include "varjepa/sigreg.hpp"

#include "varjepa/errors.hpp"

#include <cmath>

namespace varjepa {

void EppsPulleyConfig::validate() const {
  if (n_frequencies < 1 || !(max_frequency > 0.0)) throw InvalidInput("EppsPulleyConfig: invalid frequency grid");
}

std::vector<double> EppsPulleyConfig::grid() const {
  validate();
  std::vector<double> t(static_cast<std::size_t>(n_frequencies));
  const double dt = max_frequency / n_frequencies;
  for (int j = 0; j < n_frequencies; ++j) t[static_cast<std::size_t>(j)] = (j + 1) * dt;
  return t;
}

std::vector<double> EppsPulleyConfig::weights() const {
  const std::vector<double> t = grid();
  std::vector<double> w(t.size(), 1.0 / static_cast<double>(t.size()));
  if (weighting == CfWeighting::gaussian) {
    double total = 0.0;
    for (std::size_t j = 0; j < t.size(); ++j) total += (w[j] = std::exp(-0.5 * t[j] * t[j]));
    for (double& x : w) x /= total;
  }
  return w;
}

ProjectionSet sample_directions(Rng& rng, int M, int d) {
  if (M < 1 || d < 1) throw InvalidInput("sample_directions: M and d must be >= 1");
  ProjectionSet p;
  p.seed = rng.key();
  p.directions.resize(M, d);
  for (int m = 0; m < M; ++m) {
    double nrm = 0.0;
    do {
      for (int k = 0; k < d; ++k) p.directions(m, k) = rng.normal();
      nrm = p.directions.row(m).norm();
    } while (nrm < 1e-12);
    p.directions.row(m) /= nrm;
  }
  return p;
}

ProjectionSet sample_directions(std::uint64_t seed, int M, int d) {
  Rng rng(seed, Stream::projection);
  ProjectionSet p = sample_directions(rng, M, d);
  p.seed = seed;
  return p;
}

namespace {

/// Characteristic-function discrepancy for each column of P [N x M].
/// Frequencies are multiples of dt, so cos/sin at t_j come from rotating
/// (cos dt v, sin dt v) rather than calling trig J times.
struct CfStats {
  Matrix c;  // [M x J] mean cos
  Matrix s;  // [M x J] mean sin
};

CfStats cf_stats(const Matrix& P, int J, double dt) {
  const Eigen::Index N = P.rows(), M = P.cols();
  CfStats st{Matrix::Zero(M, J), Matrix::Zero(M, J)};
  for (Eigen::Index m = 0; m < M; ++m) {
    double* cr = st.c.row(m).data();
    double* sr = st.s.row(m).data();
    for (Eigen::Index n = 0; n < N; ++n) {
      const double a = dt * P(n, m);
      const double c1 = std::cos(a), s1 = std::sin(a);
      double c = c1, s = s1;
      for (int j = 0; j < J; ++j) {
        cr[j] += c;
        sr[j] += s;
        const double cn = c * c1 - s * s1;
        s = s * c1 + c * s1;
        c = cn;
      }
    }
  }
  st.c /= static_cast<double>(N);
  st.s /= static_cast<double>(N);
  return st;
}

double cf_value(const CfStats& st, const std::vector<double>& t, const std::vector<double>& w) {
  const Eigen::Index M = st.c.rows();
  double total = 0.0;
  for (Eigen::Index m = 0; m < M; ++m) {
    double acc = 0.0;
    for (std::size_t j = 0; j < t.size(); ++j) {
      const double phi = std::exp(-0.5 * t[j] * t[j]);
      const double dc = st.c(m, static_cast<Eigen::Index>(j)) - phi;
      const double ds = st.s(m, static_cast<Eigen::Index>(j));
      acc += w[j] * (dc * dc + ds * ds);
    }
    total += acc;
  }
  return total / static_cast<double>(M);
}

/// d value / d P, with value = mean over columns of the per-column statistic.
Matrix cf_grad(const Matrix& P, const CfStats& st, const std::vector<double>& t, const std::vector<double>& w,
               double dt) {
  const Eigen::Index N = P.rows(), M = P.cols();
  const int J = static_cast<int>(t.size());
  Matrix G(N, M);
  std::vector<double> kc(J), ks(J);
  for (Eigen::Index m = 0; m < M; ++m) {
    // d/dv_n of w_j[(c_j - phi_j)^2 + s_j^2] =
    //   2 w_j/N [-(c_j - phi_j) t_j sin(t_j v_n) + s_j t_j cos(t_j v_n)]
    const double scale = 2.0 / (static_cast<double>(N) * static_cast<double>(M));
    for (int j = 0; j < J; ++j) {
      const double phi = std::exp(-0.5 * t[j] * t[j]);
      kc[j] = scale * w[j] * t[j] * st.s(m, j);
      ks[j] = -scale * w[j] * t[j] * (st.c(m, j) - phi);
    }
    for (Eigen::Index n = 0; n < N; ++n) {
      const double a = dt * P(n, m);
      const double c1 = std::cos(a), s1 = std::sin(a);
      double c = c1, s = s1, acc = 0.0;
      for (int j = 0; j < J; ++j) {
        acc += kc[j] * c + ks[j] * s;
        const double cn = c * c1 - s * s1;
        s = s * c1 + c * s1;
        c = cn;
      }
      G(n, m) = acc;
    }
  }
  return G;
}

}  // namespace

double epps_pulley_stat(std::span<const double> values, const EppsPulleyConfig& cfg) {
  if (values.size() < 2) throw InvalidInput("epps_pulley_stat: need at least 2 values");
  Matrix P(static_cast<Eigen::Index>(values.size()), 1);
  for (std::size_t i = 0; i < values.size(); ++i) P(static_cast<Eigen::Index>(i), 0) = values[i];
  const auto t = cfg.grid();
  const double dt = cfg.max_frequency / cfg.n_frequencies;
  return cf_value(cf_stats(P, cfg.n_frequencies, dt), t, cfg.weights());
}

double sigreg_value(const Matrix& emb, const ProjectionSet& proj, const EppsPulleyConfig& cfg) {
  if (emb.rows() < 2) throw InvalidInput("sigreg: need at least 2 rows");
  if (emb.cols() != proj.dim()) throw InvalidInput("sigreg: embedding/projection dim mismatch");
  const Matrix P = emb * proj.directions.transpose();
  const double dt = cfg.max_frequency / cfg.n_frequencies;
  return cf_value(cf_stats(P, cfg.n_frequencies, dt), cfg.grid(), cfg.weights());
}

namespace ad {

Var sigreg(Var emb, const ProjectionSet& proj, const EppsPulleyConfig& cfg) {
  if (emb.rows() < 2) throw InvalidInput("sigreg: need at least 2 rows");
  if (emb.cols() != proj.dim()) throw InvalidInput("sigreg: embedding/projection dim mismatch");
  Matrix P = emb.value() * proj.directions.transpose();
  const double dt = cfg.max_frequency / cfg.n_frequencies;
  auto t = cfg.grid();
  auto w = cfg.weights();
  CfStats st = cf_stats(P, cfg.n_frequencies, dt);
  const double v = cf_value(st, t, w);
  const Matrix A = proj.directions;
  return emb.graph()->push(Matrix::Constant(1, 1, v), "sigreg", {emb},
                           [emb, A, P = std::move(P), st = std::move(st), t = std::move(t), w = std::move(w), dt](
                               Graph& g, const Matrix&, const Matrix& go) {
                             const Matrix dP = cf_grad(P, st, t, w, dt);
                             g.accumulate(emb, (go(0, 0) * dP) * A);
                           });
}

}  // namespace ad

}  // namespace varjepa
