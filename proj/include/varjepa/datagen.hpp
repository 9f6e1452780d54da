#pragma once

#include "varjepa/nn.hpp"
#include "varjepa/rng.hpp"
#include "varjepa/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace varjepa {

struct SimConstants {
  int d_obs = 32;
  int d_s = 16;
  int d_z = 8;
  double sigma_x = 1.0;
  double sigma_y = 0.5;
  double sigma_z = 1.0;
  double delta_scale = 2.0;
  double tau_x = 0.3;
  double tau_y = 0.3;
  int gen_hidden = 64;
};

/// One draw of (A, h_x, h_y). h_x and h_y are frozen after construction.
struct SimProcess {
  SimConstants k;
  Matrix A;  // [d_s x d_z], entries N(0, 1/d_z)
  MlpSpec h_spec;
  ParamStore h_x;
  ParamStore h_y;
  std::uint64_t seed = 0;

  Vector delta() const { return Vector::Constant(k.d_s, k.delta_scale); }
};

SimProcess sample_sim_process(std::uint64_t seed, const SimConstants& k = {});

/// Observation pairs with their ground-truth latents, one row per sample.
struct PairDataset {
  Matrix x, y;
  Matrix s_x, s_y, z;
  std::vector<int> c;
  std::uint64_t process_seed = 0;
  std::uint64_t data_key = 0;  // key of the rng passed to gen_pairs

  Eigen::Index size() const { return x.rows(); }
};

/// Sample i draws everything from rng.split(i), so any subset can be
/// regenerated independently and in parallel.
PairDataset gen_pairs(const SimProcess& process, Eigen::Index n, const Rng& rng);

/// Noise draws used for sample i, replayed from the same stream.
struct PairNoise {
  int c = 0;
  Vector eps_sx, eps_z, eps_sy, eps_x, eps_y;
};
PairNoise replay_pair_noise(const SimProcess& process, const Rng& rng, Eigen::Index i);

/// SIM tabular generator settings. Geometry and flip curve are artifact
/// choices; see the README.
struct SimTabularConfig {
  int n_numeric = 28;
  int n_categorical = 4;
  int n_classes = 3;
  int cat_bins = 4;
  double gamma = 2.0;               // u_amb = u^gamma
  double prototype_norm = 4.0;      // prototypes = prototype_norm * orthonormal directions
  double variance = 1.0;            // isotropic numeric noise variance
  double blend = 0.5;               // pull toward the alternative prototype, times u_amb
  double subset_fraction = 0.5;     // features receiving an extra pull
  double subset_blend = 0.5;        // extra pull on that subset, times u_amb
  double noise_boost = 1.0;         // extra numeric noise std, times u_amb
  double flip_max = 0.3;            // categorical flip probability = flip_max * u_amb
  bool zero_ambiguity = false;      // force u = 0
};

struct TabularDataset {
  Matrix numeric;                // [N x n_numeric]
  Matrix categorical;            // [N x n_categorical], integer codes stored as doubles
  std::vector<int> cat_cards;    // per categorical column
  std::vector<int> label;        // class in [0, n_classes)
  int n_classes = 0;
  Vector u;                      // ambiguity score in [0,1]
  Matrix prototypes;             // [n_classes x n_numeric] (empty for external data)
  std::uint64_t seed = 0;

  Eigen::Index size() const { return numeric.rows(); }
  void validate() const;
};

TabularDataset gen_sim_tabular(std::uint64_t seed, Eigen::Index n, const SimTabularConfig& cfg = {});

/// alpha_i = clip(lambda * u_i, 0, 1); x' = (1 - alpha) x + alpha r with r
/// uniform on [0,1]^D drawn from rng.split(i).
Matrix corrupt_images(const Matrix& images, const Vector& u, double lambda, const Rng& rng);

/// IDX (big-endian) readers. Images are scaled to [0,1].
Matrix read_idx_images(const std::filesystem::path& path);
std::vector<int> read_idx_labels(const std::filesystem::path& path);

}  // namespace varjepa
