#pragma once

#include "varjepa/autodiff.hpp"
#include "varjepa/rng.hpp"
#include "varjepa/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace varjepa {

/// M unit-norm directions stored as rows of an [M x d] matrix.
struct ProjectionSet {
  Matrix directions;
  std::uint64_t seed = 0;

  Eigen::Index size() const { return directions.rows(); }
  Eigen::Index dim() const { return directions.cols(); }
};

enum class CfWeighting { uniform, gaussian };

struct EppsPulleyConfig {
  int n_frequencies = 64;
  double max_frequency = 5.0;
  /// uniform: plain mean over the grid. gaussian: weights exp(-t^2/2),
  /// normalized to sum to one.
  CfWeighting weighting = CfWeighting::uniform;

  void validate() const;
  /// t_j = j * max_frequency / n_frequencies, j = 1..n_frequencies.
  std::vector<double> grid() const;
  std::vector<double> weights() const;
};

struct SigregConfig {
  int n_directions = 64;
  EppsPulleyConfig cf;
};

ProjectionSet sample_directions(Rng& rng, int M, int d);
/// Directions drawn from Rng(seed, Stream::projection).
ProjectionSet sample_directions(std::uint64_t seed, int M, int d);

/// Squared distance between the empirical characteristic function of
/// `values` and exp(-t^2/2), averaged over the frequency grid.
double epps_pulley_stat(std::span<const double> values, const EppsPulleyConfig& cfg);

/// Mean of epps_pulley_stat over the projections of the rows of `emb`.
double sigreg_value(const Matrix& emb, const ProjectionSet& proj, const EppsPulleyConfig& cfg);

namespace ad {
/// Differentiable sigreg on an [N x d] batch; returns a 1x1 node.
Var sigreg(Var emb, const ProjectionSet& proj, const EppsPulleyConfig& cfg);
}  // namespace ad

}  // namespace varjepa
