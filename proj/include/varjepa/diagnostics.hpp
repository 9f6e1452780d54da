#pragma once

#include "varjepa/datagen.hpp"
#include "varjepa/gaussian.hpp"
#include "varjepa/model.hpp"
#include "varjepa/rng.hpp"
#include "varjepa/sigreg.hpp"

#include <string>
#include <utility>
#include <vector>

namespace varjepa {

/// KL(N(mu, Sigma) || N(0, I)) for the moment-matched Gaussian of the rows
/// (1/N moments, 1e-6 jitter). Requires N > d.
double aggregated_kl(const Matrix& emb);

struct CovMetrics {
  double cov_frob_dev = 0.0;  // ||Cov - I||_F
  double mean_norm = 0.0;     // ||mean||_2
};
CovMetrics cov_metrics(const Matrix& emb);

/// Batch mean of kl_diag(q_sy, p_sy).
double coupling_kl(const std::vector<LatentBundle>& bundles);
double coupling_kl(const LatentBatch& batch);

struct SurgeryEstimate {
  double per_sample_kl = 0.0;   // exact: mean KL(q(s|x_n) || N(0,I))
  double agg_mixture_kl = 0.0;  // MC: E[log m(s) - log N(s; 0, I)]
  double mutual_info = 0.0;     // MC: E[log q(s|x_n) - log m(s)]
  double se_agg = 0.0;
  double se_mi = 0.0;
  double se_sum = 0.0;          // standard error of agg + mi (per draw)
};

/// m is the equal-weight mixture of the posteriors; draws are taken
/// samples_per_posterior times from each component.
SurgeryEstimate elbo_surgery_estimate(const std::vector<DiagGaussian>& posteriors, int samples_per_posterior, Rng& rng);

struct ProbeConfig {
  int epochs = 50;
  double lr = 3e-3;
  double weight_decay = 1e-4;
  int batch_size = 512;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  double std_floor = 1e-8;
};

/// Single affine map on standardized features.
struct ProbeResult {
  Matrix W;  // [d x C]
  RowVector b;
  RowVector mean, scale;  // standardization from the training split
  double train_acc = 0.0;
  double eval_acc = 0.0;
  std::vector<int> eval_index;  // rows of the input used for evaluation

  Matrix logits(const Matrix& emb) const;
  /// argmax, ties toward the lowest class index.
  std::vector<int> predict(const Matrix& emb) const;
};

/// Seeded 80/20 split of the rows, then train/evaluate.
ProbeResult train_linear_probe(const Matrix& emb, const std::vector<int>& labels, const ProbeConfig& cfg);
/// Explicit split.
ProbeResult train_linear_probe(const Matrix& train, const std::vector<int>& train_labels, const Matrix& eval,
                               const std::vector<int>& eval_labels, const ProbeConfig& cfg);

double accuracy(const std::vector<int>& pred, const std::vector<int>& labels);

/// Drops ceil(drop_fraction * N) most-uncertain samples (ties: lower index
/// dropped first) and returns accuracy on the rest.
double selective_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels,
                          const std::vector<double>& uncertainty, double drop_fraction);

struct CoveragePoint {
  double coverage = 0.0;
  double accuracy = 0.0;
};
/// Coverage 1.00, 0.95, ..., 0.05.
std::vector<CoveragePoint> risk_coverage(const std::vector<bool>& correct, const std::vector<double>& uncertainty);

/// Mann-Whitney AUC, ties count 1/2.
double roc_auc(const std::vector<double>& scores, const std::vector<bool>& positive);

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};
std::vector<RocPoint> roc_curve(const std::vector<double>& scores, const std::vector<bool>& positive);

/// Positives: u strictly above its q-quantile (nearest rank).
std::vector<bool> high_quantile_flags(const Vector& u, double q);

struct BlockMetrics {
  double agg_kl = 0.0;
  double sigreg_mse = 0.0;
  double cov_frob_dev = 0.0;
  double mean_norm = 0.0;
  double probe_acc = 0.0;
};

struct DiagnosticsRecord {
  int epoch = 0;
  BlockMetrics sx;
  BlockMetrics sy;
  double coupling_kl = 0.0;

  static std::vector<std::string> csv_header();
  std::vector<double> csv_values() const;
};

BlockMetrics block_metrics(const Matrix& emb, const std::vector<int>& labels, const ProjectionSet& proj,
                           const EppsPulleyConfig& cf, const ProbeConfig& probe);

/// Which embedding the distribution metrics and probes see.
///   sample: one reparameterized draw per eval row from the fixed `draws` noise
///   mean:   posterior means (zero noise)
enum class EmbeddingSource { sample, mean };

/// Every record field on the eval set. `draws` must be given for `sample`.
DiagnosticsRecord epoch_diagnostics(const VarJepaModel& model, const PairDataset& eval, const ProjectionSet& proj,
                                    const EppsPulleyConfig& cf, const ProbeConfig& probe, int epoch,
                                    EmbeddingSource source = EmbeddingSource::mean, const NoiseBatch* draws = nullptr);

}  // namespace varjepa
