#include "varjepa/diagnostics.hpp"

#include "varjepa/errors.hpp"
#include "varjepa/optim.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <limits>
#include <set>

namespace varjepa {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

struct Moments {
  Vector mean;
  Eigen::MatrixXd cov;
};

Moments moments(const Matrix& emb) {
  const double n = static_cast<double>(emb.rows());
  Moments m;
  m.mean = emb.colwise().sum().transpose() / n;
  const Matrix centered = emb.rowwise() - m.mean.transpose();
  m.cov = (centered.transpose() * centered) / n;
  return m;
}

}  // namespace

double aggregated_kl(const Matrix& emb) {
  const Eigen::Index n = emb.rows(), d = emb.cols();
  if (n <= d) throw InvalidInput("aggregated_kl: need more samples than dimensions");
  Moments m = moments(emb);
  m.cov.diagonal().array() += 1e-6;
  const Eigen::LLT<Eigen::MatrixXd> llt(m.cov);
  if (llt.info() != Eigen::Success) throw NumericalError("aggregated_kl: covariance is singular after jitter");
  const Eigen::MatrixXd L = llt.matrixL();
  const double logdet = 2.0 * L.diagonal().array().log().sum();
  if (!std::isfinite(logdet)) throw NumericalError("aggregated_kl: non-finite log-determinant");
  return 0.5 * (m.cov.trace() + m.mean.squaredNorm() - logdet - static_cast<double>(d));
}

CovMetrics cov_metrics(const Matrix& emb) {
  if (emb.rows() < 2) throw InvalidInput("cov_metrics: need at least 2 samples");
  const Moments m = moments(emb);
  const Eigen::MatrixXd dev = m.cov - Eigen::MatrixXd::Identity(emb.cols(), emb.cols());
  return {dev.norm(), m.mean.norm()};
}

double coupling_kl(const std::vector<LatentBundle>& bundles) {
  if (bundles.empty()) throw InvalidInput("coupling_kl: empty batch");
  double s = 0.0;
  for (const auto& b : bundles) s += kl_diag(b.q_sy, b.p_sy);
  return s / static_cast<double>(bundles.size());
}

double coupling_kl(const LatentBatch& batch) {
  const Eigen::Index n = batch.q_sy_mean.rows();
  if (n == 0) throw InvalidInput("coupling_kl: empty batch");
  double s = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    s += kl_diag(DiagGaussian(batch.q_sy_mean.row(i).transpose(), batch.q_sy_log_var.row(i).transpose()),
                 DiagGaussian(batch.p_sy_mean.row(i).transpose(), batch.p_sy_log_var.row(i).transpose()));
  }
  return s / static_cast<double>(n);
}

SurgeryEstimate elbo_surgery_estimate(const std::vector<DiagGaussian>& post, int samples_per_posterior, Rng& rng) {
  if (post.empty()) throw InvalidInput("elbo_surgery_estimate: no posteriors");
  if (samples_per_posterior < 2) throw InvalidInput("elbo_surgery_estimate: need >= 2 draws per posterior");
  const std::size_t N = post.size();
  const Eigen::Index d = post.front().dim();
  for (const auto& q : post) {
    if (q.dim() != d) throw InvalidInput("elbo_surgery_estimate: posterior dims differ");
  }
  SurgeryEstimate est;
  for (const auto& q : post) est.per_sample_kl += kl_to_standard(q);
  est.per_sample_kl /= static_cast<double>(N);

  const double logN = std::log(static_cast<double>(N));
  std::vector<double> comp(N);
  double sa = 0.0, sa2 = 0.0, sm = 0.0, sm2 = 0.0, ss = 0.0, ss2 = 0.0;
  Vector eps(d);
  for (std::size_t n = 0; n < N; ++n) {
    for (int k = 0; k < samples_per_posterior; ++k) {
      for (Eigen::Index j = 0; j < d; ++j) eps(j) = rng.normal();
      const Vector s = reparam_sample(post[n], eps);
      for (std::size_t c = 0; c < N; ++c) comp[c] = post[c].log_density(s);
      const double mx = *std::max_element(comp.begin(), comp.end());
      double acc = 0.0;
      for (double v : comp) acc += std::exp(v - mx);
      const double log_mix = mx + std::log(acc) - logN;
      const double log_prior = -0.5 * (static_cast<double>(d) * kLog2Pi + s.squaredNorm());
      const double a = log_mix - log_prior;
      const double m = comp[n] - log_mix;
      sa += a;
      sa2 += a * a;
      sm += m;
      sm2 += m * m;
      ss += a + m;
      ss2 += (a + m) * (a + m);
    }
  }
  const double T = static_cast<double>(N) * samples_per_posterior;
  auto se = [T](double s1, double s2) {
    const double mean = s1 / T;
    const double var = std::max(0.0, (s2 - T * mean * mean) / (T - 1.0));
    return std::sqrt(var / T);
  };
  est.agg_mixture_kl = sa / T;
  est.mutual_info = sm / T;
  est.se_agg = se(sa, sa2);
  est.se_mi = se(sm, sm2);
  est.se_sum = se(ss, ss2);
  return est;
}

Matrix ProbeResult::logits(const Matrix& emb) const {
  Matrix z = (emb.rowwise() - mean).array().rowwise() / scale.array();
  Matrix out = z * W;
  out.rowwise() += b;
  return out;
}

std::vector<int> ProbeResult::predict(const Matrix& emb) const {
  const Matrix L = logits(emb);
  std::vector<int> out(static_cast<std::size_t>(L.rows()));
  for (Eigen::Index i = 0; i < L.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < L.cols(); ++c) {
      if (L(i, c) > L(i, best)) best = c;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& labels) {
  if (pred.size() != labels.size() || pred.empty()) throw InvalidInput("accuracy: size mismatch or empty");
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(pred.size());
}

namespace {

Matrix gather_rows(const Matrix& m, const std::vector<int>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

std::vector<int> gather(const std::vector<int>& v, const std::vector<int>& idx) {
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = v[static_cast<std::size_t>(idx[i])];
  return out;
}

}  // namespace

ProbeResult train_linear_probe(const Matrix& emb, const std::vector<int>& labels, const ProbeConfig& cfg) {
  const auto n = static_cast<int>(emb.rows());
  if (static_cast<std::size_t>(n) != labels.size()) throw InvalidInput("probe: label count mismatch");
  if (n < 2) throw InvalidInput("probe: need at least 2 samples");
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Rng r = Rng(cfg.seed, Stream::probe).split(0);
  for (int i = n - 1; i > 0; --i) std::swap(perm[static_cast<std::size_t>(i)], perm[r.below(static_cast<std::uint64_t>(i) + 1)]);
  const int n_train = std::clamp(static_cast<int>(std::floor(cfg.train_fraction * n)), 1, n - 1);
  std::vector<int> tr(perm.begin(), perm.begin() + n_train);
  std::vector<int> ev(perm.begin() + n_train, perm.end());
  ProbeResult res = train_linear_probe(gather_rows(emb, tr), gather(labels, tr), gather_rows(emb, ev), gather(labels, ev), cfg);
  res.eval_index = ev;
  return res;
}

ProbeResult train_linear_probe(const Matrix& train, const std::vector<int>& ytr, const Matrix& eval,
                               const std::vector<int>& yev, const ProbeConfig& cfg) {
  if (static_cast<std::size_t>(train.rows()) != ytr.size() || static_cast<std::size_t>(eval.rows()) != yev.size()) {
    throw InvalidInput("probe: label count mismatch");
  }
  if (train.rows() == 0 || eval.rows() == 0) throw InvalidInput("probe: empty split");
  std::set<int> classes;
  int max_class = 0;
  for (int l : ytr) {
    if (l < 0) throw InvalidInput("probe: negative label");
    classes.insert(l);
    max_class = std::max(max_class, l);
  }
  for (int l : yev) {
    if (l < 0) throw InvalidInput("probe: negative label");
    classes.insert(l);
    max_class = std::max(max_class, l);
  }
  if (classes.size() < 2) throw InvalidInput("probe: at least two classes are required");
  const Eigen::Index C = max_class + 1;
  const Eigen::Index d = train.cols();
  const Eigen::Index n = train.rows();

  ProbeResult res;
  res.mean = train.colwise().sum() / static_cast<double>(n);
  const Matrix centered = train.rowwise() - res.mean;
  res.scale = (centered.array().square().colwise().sum() / static_cast<double>(n)).sqrt().matrix();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (!(res.scale(j) > cfg.std_floor)) res.scale(j) = 1.0;
  }
  const Matrix Z = centered.array().rowwise() / res.scale.array();

  ParamStore params({{"w", Tensor({static_cast<std::size_t>(d), static_cast<std::size_t>(C)})},
                     {"b", Tensor({static_cast<std::size_t>(C)})}});
  AdamWState opt(params, AdamWConfig{cfg.lr, cfg.weight_decay});
  Rng shuffle = Rng(cfg.seed, Stream::probe).split(1);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  ParamStore grads = params.zeros_like();
  for (int e = 0; e < cfg.epochs; ++e) {
    for (Eigen::Index i = n - 1; i > 0; --i) {
      std::swap(order[static_cast<std::size_t>(i)], order[shuffle.below(static_cast<std::uint64_t>(i) + 1)]);
    }
    for (Eigen::Index s = 0; s < n; s += cfg.batch_size) {
      const Eigen::Index len = std::min<Eigen::Index>(cfg.batch_size, n - s);
      Matrix Xb(len, d);
      for (Eigen::Index i = 0; i < len; ++i) Xb.row(i) = Z.row(order[static_cast<std::size_t>(s + i)]);
      Matrix L = Xb * params.at("w").matrix();
      L.rowwise() += params.at("b").matrix().row(0);
      // softmax minus one-hot, averaged over the batch
      for (Eigen::Index i = 0; i < len; ++i) {
        const double mx = L.row(i).maxCoeff();
        L.row(i) = (L.row(i).array() - mx).exp().matrix();
        L.row(i) /= L.row(i).sum();
        L(i, ytr[static_cast<std::size_t>(order[static_cast<std::size_t>(s + i)])]) -= 1.0;
      }
      L /= static_cast<double>(len);
      grads.at("w").matrix() = Xb.transpose() * L;
      grads.at("b").matrix() = L.colwise().sum();
      adamw_step(params, grads, opt);
    }
  }
  res.W = params.at("w").to_matrix();
  res.b = params.at("b").matrix().row(0);
  res.train_acc = accuracy(res.predict(train), ytr);
  res.eval_acc = accuracy(res.predict(eval), yev);
  return res;
}

namespace {

/// Indices ordered most-uncertain first; equal uncertainty keeps index order.
std::vector<std::size_t> uncertainty_order(const std::vector<double>& u) {
  std::vector<std::size_t> idx(u.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&u](std::size_t a, std::size_t b) { return u[a] > u[b]; });
  return idx;
}

double kept_accuracy(const std::vector<bool>& correct, const std::vector<std::size_t>& order, std::size_t drop) {
  std::size_t ok = 0;
  for (std::size_t k = drop; k < order.size(); ++k) ok += correct[order[k]] ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(order.size() - drop);
}

}  // namespace

double selective_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels,
                          const std::vector<double>& uncertainty, double drop_fraction) {
  const std::size_t n = predictions.size();
  if (labels.size() != n || uncertainty.size() != n || n == 0) throw InvalidInput("selective_accuracy: size mismatch");
  if (!(drop_fraction >= 0.0 && drop_fraction < 1.0)) throw InvalidInput("selective_accuracy: drop_fraction must be in [0,1)");
  std::vector<bool> correct(n);
  for (std::size_t i = 0; i < n; ++i) correct[i] = predictions[i] == labels[i];
  const auto drop = static_cast<std::size_t>(std::ceil(drop_fraction * static_cast<double>(n) - 1e-9));
  return kept_accuracy(correct, uncertainty_order(uncertainty), std::min(drop, n - 1));
}

std::vector<CoveragePoint> risk_coverage(const std::vector<bool>& correct, const std::vector<double>& uncertainty) {
  const std::size_t n = correct.size();
  if (n == 0 || uncertainty.size() != n) throw InvalidInput("risk_coverage: size mismatch or empty");
  const auto order = uncertainty_order(uncertainty);
  std::vector<CoveragePoint> out;
  for (int k = 20; k >= 1; --k) {
    // drop ceil((20 - k) * n / 20) samples
    std::size_t drop = ((20 - static_cast<std::size_t>(k)) * n + 19) / 20;
    drop = std::min(drop, n - 1);
    out.push_back({k / 20.0, kept_accuracy(correct, order, drop)});
  }
  return out;
}

double roc_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  const std::size_t n = scores.size();
  if (positive.size() != n) throw InvalidInput("roc_auc: size mismatch");
  std::size_t n_pos = 0;
  for (bool p : positive) n_pos += p ? 1 : 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw InvalidInput("roc_auc: both classes must be present");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (positive[idx[k]]) rank_sum += avg;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

std::vector<RocPoint> roc_curve(const std::vector<double>& scores, const std::vector<bool>& positive) {
  const std::size_t n = scores.size();
  if (positive.size() != n) throw InvalidInput("roc_curve: size mismatch");
  std::size_t n_pos = 0;
  for (bool p : positive) n_pos += p ? 1 : 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw InvalidInput("roc_curve: both classes must be present");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&scores](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> out{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) {
      (positive[idx[j]] ? tp : fp) += 1;
      ++j;
    }
    out.push_back({scores[idx[i]], static_cast<double>(fp) / static_cast<double>(n_neg),
                   static_cast<double>(tp) / static_cast<double>(n_pos)});
    i = j;
  }
  return out;
}

std::vector<bool> high_quantile_flags(const Vector& u, double q) {
  const auto n = static_cast<std::size_t>(u.size());
  if (n == 0) throw InvalidInput("high_quantile_flags: empty input");
  std::vector<double> s(u.data(), u.data() + n);
  std::sort(s.begin(), s.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n) - 1e-9));
  const double thr = s[std::clamp<std::size_t>(rank, 1, n) - 1];
  std::vector<bool> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = u(static_cast<Eigen::Index>(i)) > thr;
  return out;
}

std::vector<std::string> DiagnosticsRecord::csv_header() {
  return {"epoch",          "agg_kl_sx",  "sigreg_mse_sx", "cov_frob_dev_sx", "mean_norm_sx", "probe_acc_sx",
          "agg_kl_sy",      "sigreg_mse_sy", "cov_frob_dev_sy", "mean_norm_sy", "probe_acc_sy", "coupling_kl"};
}

std::vector<double> DiagnosticsRecord::csv_values() const {
  return {static_cast<double>(epoch), sx.agg_kl,       sx.sigreg_mse, sx.cov_frob_dev, sx.mean_norm, sx.probe_acc,
          sy.agg_kl,                  sy.sigreg_mse,   sy.cov_frob_dev, sy.mean_norm, sy.probe_acc, coupling_kl};
}

BlockMetrics block_metrics(const Matrix& emb, const std::vector<int>& labels, const ProjectionSet& proj,
                           const EppsPulleyConfig& cf, const ProbeConfig& probe) {
  BlockMetrics b;
  b.agg_kl = aggregated_kl(emb);
  b.sigreg_mse = sigreg_value(emb, proj, cf);
  const CovMetrics cm = cov_metrics(emb);
  b.cov_frob_dev = cm.cov_frob_dev;
  b.mean_norm = cm.mean_norm;
  b.probe_acc = train_linear_probe(emb, labels, probe).eval_acc;
  return b;
}

DiagnosticsRecord epoch_diagnostics(const VarJepaModel& model, const PairDataset& eval, const ProjectionSet& proj,
                                    const EppsPulleyConfig& cf, const ProbeConfig& probe, int epoch,
                                    EmbeddingSource source, const NoiseBatch* draws) {
  if (eval.x.cols() != model.dims.d_obs) throw InvalidInput("epoch_diagnostics: dataset/model dims differ");
  const bool sampled = source == EmbeddingSource::sample;
  if (sampled && (draws == nullptr || draws->sx.rows() != eval.size())) {
    throw InvalidInput("epoch_diagnostics: sample embeddings need one noise row per eval sample");
  }
  const LatentBatch lb = infer_batch(model, eval.x, eval.y, sampled ? *draws : NoiseBatch::zeros(eval.size(), model.dims));
  DiagnosticsRecord r;
  r.epoch = epoch;
  r.sx = block_metrics(sampled ? lb.s_x : lb.q_sx_mean, eval.c, proj, cf, probe);
  r.sy = block_metrics(sampled ? lb.s_y : lb.q_sy_mean, eval.c, proj, cf, probe);
  r.coupling_kl = coupling_kl(lb);
  return r;
}

}  // namespace varjepa
