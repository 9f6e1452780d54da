#pragma once

#include "varjepa/archive.hpp"
#include "varjepa/datagen.hpp"
#include "varjepa/diagnostics.hpp"
#include "varjepa/objective.hpp"
#include "varjepa/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace varjepa {

/// Internal feature order: numeric columns first, then categorical ones.
struct FeatureSchema {
  int n_numeric = 0;
  std::vector<int> cat_cards;

  int n_categorical() const { return static_cast<int>(cat_cards.size()); }
  int n_features() const { return n_numeric + n_categorical(); }
  bool is_numeric(int j) const { return j < n_numeric; }
  /// Decoder output width: one mean per numeric, C_j logits per categorical.
  int output_width() const;
  /// Masked input width: value + presence per numeric, one-hot + presence per categorical.
  int encoding_width() const;
  void validate() const;

  static FeatureSchema of(const TabularDataset& data);
};

struct MaskRatios {
  double ctx_min = 0.15;
  double ctx_max = 0.5;
  double trg_min = 0.15;
  double trg_max = 0.8;

  void validate(int n_features) const;
};

/// Context indices and K target index sets, each sorted ascending.
struct MaskPair {
  std::vector<int> ctx;
  std::vector<std::vector<int>> trg;

  int m_ctx() const { return static_cast<int>(ctx.size()); }
  int m_trg() const { return trg.empty() ? 0 : static_cast<int>(trg.front().size()); }
  int k() const { return static_cast<int>(trg.size()); }
};

/// Sizes M_ctx ~ U[floor(D r_ctx_min), floor(D r_ctx_max)] and likewise M_trg,
/// resampled while M_ctx + M_trg > D or either is zero. Throws ConfigError
/// after `max_retries` failed draws.
std::pair<int, int> sample_mask_sizes(int n_features, const MaskRatios& r, Rng& rng, int max_retries = 100);
/// Uniform disjoint draw for fixed sizes; each target set avoids the context.
MaskPair draw_masks(int n_features, int m_ctx, int m_trg, int K, Rng& rng);
MaskPair collate_masks(int n_features, const MaskRatios& r, int K, Rng& rng, int max_retries = 100);
/// One size draw shared by the whole batch, then per-sample masks.
std::vector<MaskPair> collate_batch(int batch, int n_features, const MaskRatios& r, int K, Rng& rng,
                                    int max_retries = 100);

struct TabularDims {
  int latent = 16;  // per-feature latent dim d
  int aux = 16;     // d_z
  int hidden = 128;
  int depth = 2;
  Activation activation = Activation::gelu;

  void validate() const;
};

///   ctx  : masked encoding            -> per-feature (mean, log_var) of s_x
///   aux  : pooled s_x                 -> (mean, log_var) of z
///   trg  : [pooled s_x, z, full enc]  -> per-feature (mean, log_var) of s_w
///   pred : [pooled s_x, z, trg mask]  -> per-feature (mean, log_var) of s_y
///   dec  : per-feature linear heads (block-diagonal), shared by both paths
struct TabularModel {
  FeatureSchema schema;
  TabularDims dims;
  Vector num_mean, num_scale;  // per-column standardization
  MlpSpec ctx, aux, trg, pred;
  ParamStore params;

  static TabularModel init(const FeatureSchema& schema, const TabularDims& dims, const Vector& num_mean,
                           const Vector& num_scale, std::uint64_t seed);

  int flat_latent() const { return schema.n_features() * dims.latent; }
  /// [flat_latent x output_width] 0/1 pattern of the decoder blocks.
  Matrix decoder_mask() const;
  Matrix standardize(const Matrix& numeric) const;
};

/// Column means and stds (floored at 1e-8) of the numeric block.
std::pair<Vector, Vector> numeric_stats(const Matrix& numeric);

/// Row n gets the encoding of its features with presence taken from `presence` [B x D].
Matrix encode_features(const FeatureSchema& schema, const Matrix& num_std, const Matrix& categorical,
                       const Matrix& presence);

/// Distribution parameters and decoder outputs for one batch of B samples
/// and K target masks (target rows ordered k * B + n).
struct TabularOutputs {
  Matrix q_sx_mean, q_sx_log_var;  // [B x D*d]
  Matrix q_z_mean, q_z_log_var;    // [B x d_z]
  Matrix q_sw_mean, q_sw_log_var;  // [B x D*d]
  Matrix p_sy_mean, p_sy_log_var;  // [B*K x D*d]
  Matrix dec_x;                    // [B x output_width], from s_x samples
  Matrix dec_w;                    // [B*K x output_width], from s_w samples
  double log_var_x = 0.0;
  double log_var_y = 0.0;
};

struct TabularLossVars {
  ad::Var rec, gen, kl_sx, kl_z, kl_sy;
};

namespace ad {
struct TabularHeads {
  GaussVars q_sx, q_z, q_sw, p_sy;
  Var dec_x, dec_w, log_var_x, log_var_y;
};
}  // namespace ad

/// Loss terms with per-sample normalizations 1/M_ctx (rec, kl_sx), 1/D (gen),
/// 1 (kl_z), 1/(K M_trg) (kl_sy), then averaged over the batch.
TabularLossVars tabular_loss_terms(ad::Graph& g, const ad::TabularHeads& h, const FeatureSchema& schema, int latent,
                                   const Matrix& num_std, const Matrix& categorical,
                                   const std::vector<MaskPair>& masks);

/// Value-level version on precomputed outputs; total uses `w`.
LossBreakdown tabular_losses(const TabularOutputs& out, const FeatureSchema& schema, int latent,
                             const Matrix& num_std, const Matrix& categorical, const std::vector<MaskPair>& masks,
                             const LossWeights& w);

struct TabularNoise {
  Matrix sx;  // [B x D*d]
  Matrix z;   // [B x d_z]
  Matrix sw;  // [B*K x D*d]

  static TabularNoise zeros(int B, int K, const TabularModel& m);
  static TabularNoise draw(int B, int K, const TabularModel& m, Rng& rng);
};

/// Full forward pass; `num_std` is the standardized numeric block.
ad::TabularHeads tabular_forward(const TabularModel& m, const VarMap& vars, ad::Graph& g, const Matrix& num_std,
                                 const Matrix& categorical, const std::vector<MaskPair>& masks,
                                 const TabularNoise& noise);

struct TabularConfig {
  TabularDims dims;
  MaskRatios ratios;
  int K = 4;
  LossWeights weights{0.001, 0.1, 1e-6, 1e-6, 1e-5, 0.0, 0.0};
  /// Annealing lengths in epochs; converted to optimizer steps.
  int anneal_epochs_sx = 50;
  int anneal_epochs_z = 50;
  int anneal_epochs_sy = 50;
  AdamWConfig optim{5e-4, 1e-6};
  int epochs = 60;
  int batch_size = 512;
  std::uint64_t seed = 0;
  int probe_every = 5;
  int patience = 4;
  double probe_drop = 0.2;
  double val_fraction = 0.2;
  ProbeConfig probe{30, 3e-3, 1e-4, 512, 0.8, 0, 1e-8};
  int max_mask_retries = 100;

  void validate() const;
};

enum class UncertaintyAgg { mean, p90 };

struct TabularProbeRecord {
  int epoch = 0;
  double val_acc = 0.0;
  double filtered_val_acc = 0.0;
  bool best = false;
};

struct TabularTrainResult {
  TabularModel model;
  int best_epoch = 0;
  std::vector<LossRow> losses;
  std::vector<TabularProbeRecord> probes;
};

TabularTrainResult train_tabular(const TabularConfig& cfg, const TabularDataset& data);

struct EmbeddingsWithUncertainty {
  Matrix embeddings;  // [N x D*d] target-posterior means
  Vector uncertainty;
};

/// Deterministic: all features present, posterior means throughout.
EmbeddingsWithUncertainty extract_embeddings_uncertainty(const TabularModel& m, const TabularDataset& data,
                                                         UncertaintyAgg agg, Eigen::Index chunk = 1024);

/// Nearest-rank percentile: sorted[ceil(q n) - 1].
double nearest_rank_percentile(std::vector<double> values, double q);

void save_tabular_model(const std::filesystem::path& path, const TabularModel& m, const nlohmann::json& meta);
std::pair<TabularModel, nlohmann::json> load_tabular_model(const std::filesystem::path& path);

}  // namespace varjepa
