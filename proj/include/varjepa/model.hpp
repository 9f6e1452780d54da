#pragma once

#include "varjepa/gaussian.hpp"
#include "varjepa/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace varjepa {

struct ModelDims {
  int d_obs = 32;
  int d_s = 16;
  int d_z = 8;
  int hidden = 128;
  int depth = 2;
  Activation activation = Activation::gelu;

  void validate() const;
};

/// Six networks plus the two global reconstruction log-variances.
///   ctx   : x            -> (mean, log_var) of s_x
///   aux   : s_x          -> (mean, log_var) of z
///   trg   : [s_x, z, y]  -> (mean, log_var) of s_y   (posterior)
///   pred  : [s_x, z]     -> (mean, log_var) of s_y   (conditional prior)
///   dec_x : s_x          -> mean of x
///   dec_y : s_y          -> mean of y
struct VarJepaModel {
  ModelDims dims;
  MlpSpec ctx, aux, trg, pred, dec_x, dec_y;
  ParamStore params;

  static VarJepaModel init(const ModelDims& dims, std::uint64_t seed);
  /// All weights, biases and log-variances zero.
  static VarJepaModel zeros(const ModelDims& dims);

  double log_var_x() const { return params.at("log_var_x")[0]; }
  double log_var_y() const { return params.at("log_var_y")[0]; }
};

/// Standard-normal noise for one batch, one row per sample.
struct NoiseBatch {
  Matrix sx;
  Matrix z;
  Matrix sy;

  static NoiseBatch zeros(Eigen::Index n, const ModelDims& d);
  static NoiseBatch draw(Eigen::Index n, const ModelDims& d, Rng& rng);
};

/// Tape-level latents for a batch.
struct BatchLatents {
  ad::GaussVars q_sx, q_z, q_sy, p_sy;
  ad::Var s_x, z, s_y;
};

/// Posterior chain: q(s_x|x) -> sample s_x -> q(z|s_x) -> sample z ->
/// q(s_y|s_x,z,y), p(s_y|s_x,z) -> sample s_y from q.
BatchLatents forward_latents(const VarJepaModel& m, const VarMap& vars, ad::Graph& g, const Matrix& x, const Matrix& y,
                             const NoiseBatch& noise);

ad::Var decode_x(const VarJepaModel& m, const VarMap& vars, ad::Var s_x);
ad::Var decode_y(const VarJepaModel& m, const VarMap& vars, ad::Var s_y);

struct LatentBundle {
  DiagGaussian q_sx, q_z, q_sy, p_sy;
  Vector s_x, z, s_y;
  Vector eps_sx, eps_z, eps_sy;
};

/// Value-level batch of the same quantities, one row per sample.
struct LatentBatch {
  Matrix q_sx_mean, q_sx_log_var;
  Matrix q_z_mean, q_z_log_var;
  Matrix q_sy_mean, q_sy_log_var;
  Matrix p_sy_mean, p_sy_log_var;
  Matrix s_x, z, s_y;

  LatentBundle bundle(Eigen::Index i, const NoiseBatch& noise) const;
};

LatentBatch infer_batch(const VarJepaModel& m, const Matrix& x, const Matrix& y, const NoiseBatch& noise);
LatentBundle infer_forward(const VarJepaModel& m, const Vector& x, const Vector& y, const Vector& eps_sx,
                           const Vector& eps_z, const Vector& eps_sy);

struct Generated {
  Vector s_x, z, s_y, y;
};

/// Generative pathway: s_x ~ q(s_x|x), z is the prior draw noise_z,
/// s_y ~ p(s_y|s_x,z), y = dec_y(s_y) + sigma_y * noise_y.
Generated generate(const VarJepaModel& m, const Vector& x, const Vector& noise_sx, const Vector& noise_z,
                   const Vector& noise_sy, const Vector& noise_y);

struct Embedding {
  Vector sx_mean, z_mean, sy_mean, sy_std;
};

struct EmbeddingBatch {
  Matrix sx_mean, z_mean, sy_mean, sy_std;
};

Embedding embed(const VarJepaModel& m, const Vector& x, const Vector& y);
/// Zero-noise pass; processed in chunks of `chunk` rows.
EmbeddingBatch embed_batch(const VarJepaModel& m, const Matrix& x, const Matrix& y, Eigen::Index chunk = 2048);

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::string variant;
  int epoch = 0;
};

void save_checkpoint(const std::filesystem::path& path, const VarJepaModel& m, const CheckpointMeta& meta);
std::pair<VarJepaModel, CheckpointMeta> load_checkpoint(const std::filesystem::path& path);

}  // namespace varjepa
