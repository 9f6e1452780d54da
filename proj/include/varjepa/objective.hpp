#pragma once

#include "varjepa/datagen.hpp"
#include "varjepa/diagnostics.hpp"
#include "varjepa/model.hpp"
#include "varjepa/optim.hpp"
#include "varjepa/sigreg.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace varjepa {

struct LossWeights {
  double alpha_rec = 1.0;
  double alpha_gen = 1.0;
  double alpha_kl_sx = 1.0;
  double alpha_kl_z = 1.0;
  double alpha_kl_sy = 1.0;
  double lambda_sx = 0.0;
  double lambda_sy = 0.0;

  /// Throws InvalidInput unless every weight is finite and >= 0.
  void validate() const;
};

struct AnnealSchedule {
  double final_weight = 1.0;
  std::int64_t anneal_steps = 0;
  std::int64_t start_step = 0;
};

/// final * min(max(t - start, 0) / steps, 1); with steps = 0 the weight
/// jumps from 0 to final at t = start.
double anneal_weight(const AnnealSchedule& s, std::int64_t t);

struct LossBreakdown {
  double rec = 0.0;
  double gen = 0.0;
  double kl_sx = 0.0;
  double kl_z = 0.0;
  double kl_sy = 0.0;
  double sigreg_sx = 0.0;
  double sigreg_sy = 0.0;
  double total = 0.0;

  /// Weighted sum of the components under `w`.
  double weighted(const LossWeights& w) const;
};

struct VariantConfig {
  std::string id = "A";
  LossWeights weights;
  /// Linear KL warm-up, in optimizer steps (0 = constant weight).
  std::int64_t anneal_steps_kl_sx = 0;
  std::int64_t anneal_steps_kl_z = 0;
  std::int64_t anneal_steps_kl_sy = 0;
  std::int64_t anneal_start = 0;
  AdamWConfig optim{1e-3, 1e-6};
  int epochs = 40;
  int batch_size = 512;
  std::uint64_t seed = 0;
  ModelDims dims;
  SigregConfig sigreg;
  ProbeConfig probe;

  void validate() const;
  /// Weights at optimizer step t (KL terms annealed, others constant).
  LossWeights weights_at(std::int64_t t) const;
};

/// Variants A..J of the simulation ablation.
VariantConfig make_variant(char id);

// ---- tape-level losses ----

struct ElboVars {
  ad::Var rec, gen, kl_sx, kl_z, kl_sy;
};

/// Batch means of the five terms for latents produced by forward_latents.
ElboVars elbo_terms(const VarJepaModel& m, const VarMap& vars, const BatchLatents& lat, const Matrix& x,
                    const Matrix& y);

struct LossGraph {
  ElboVars terms;
  std::optional<ad::Var> sigreg_sx, sigreg_sy;
  ad::Var total;
  LossBreakdown values;
};

/// Full objective on one batch. SIGReg terms are built only when their
/// weight is nonzero and a projection set is supplied.
LossGraph build_loss(const VarJepaModel& m, const VarMap& vars, ad::Graph& g, const Matrix& x, const Matrix& y,
                     const NoiseBatch& noise, const LossWeights& w, const ProjectionSet* proj_sx = nullptr,
                     const ProjectionSet* proj_sy = nullptr, const EppsPulleyConfig& cf = {});

// ---- value-level losses ----

/// Per-sample distributions and decoder outputs, for recomposition checks.
struct ElboParts {
  std::vector<DiagGaussian> q_sx, q_z, q_sy, p_sy;
  Matrix x, x_mean, y, y_mean;
  double var_x = 1.0;
  double var_y = 1.0;
};

LossBreakdown elbo_loss(const ElboParts& parts, const LossWeights& w);
LossBreakdown elbo_loss(const VarJepaModel& m, const std::vector<LatentBundle>& bundles, const Matrix& x,
                        const Matrix& y, const LossWeights& w);

/// Mean over rows of ||predicted - sg(target)||^2; target gets no gradient.
ad::Var jepa_baseline_loss(ad::Var predicted, ad::Var target);
double jepa_baseline_loss(const Matrix& predicted, const Matrix& target);

// ---- training ----

struct LossRow {
  int epoch = 0;
  std::int64_t step = 0;
  LossBreakdown loss;
};

using DiagnosticsHook = std::function<std::optional<DiagnosticsRecord>(int epoch, const VarJepaModel& model)>;

struct TrainResult {
  VarJepaModel model;
  std::vector<LossRow> losses;
  std::vector<DiagnosticsRecord> records;
};

/// Shuffle per epoch from the run seed, iterate batches (final short batch
/// kept), fresh SIGReg directions per step, AdamW. The hook runs after every
/// epoch. A non-finite loss aborts with NumericalError naming epoch, batch
/// and term.
TrainResult train_run(const VariantConfig& cfg, const PairDataset& data, const DiagnosticsHook& hook = {});

/// Hook computing epoch_diagnostics on `eval`. Projection directions and the
/// posterior draws are fixed across epochs and derived from `diag_seed`.
/// `eval` must outlive the hook.
DiagnosticsHook standard_diagnostics_hook(const PairDataset& eval, const VariantConfig& cfg, std::uint64_t diag_seed,
                                          EmbeddingSource source = EmbeddingSource::sample);

std::vector<std::string> loss_csv_header();

}  // namespace varjepa
