#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <span>
#include <vector>

namespace varjepa {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Array = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major tensor of doubles. Rank 1 and 2 are the common cases;
/// higher ranks are stored but only viewed as flat data.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor from_matrix(const Matrix& m);
  static Tensor from_vector(const Vector& v);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  /// Rank-1 tensors are viewed as a single row.
  Eigen::Index rows() const;
  Eigen::Index cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  Eigen::Map<Matrix> matrix();
  Eigen::Map<const Matrix> matrix() const;
  Matrix to_matrix() const { return matrix(); }

  bool all_finite() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_size(const std::vector<std::size_t>& shape);

}  // namespace varjepa
