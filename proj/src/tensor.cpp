#include "varjepa/tensor.hpp"

#include "varjepa/errors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace varjepa {

std::size_t shape_size(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_)) {
    throw InvalidInput("tensor data length does not match shape");
  }
}

Tensor Tensor::from_matrix(const Matrix& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  Eigen::Map<Matrix>(t.data_.data(), m.rows(), m.cols()) = m;
  return t;
}

Tensor Tensor::from_vector(const Vector& v) {
  return Tensor({static_cast<std::size_t>(v.size())}, std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::Index Tensor::rows() const {
  if (shape_.empty()) return 1;
  if (shape_.size() == 1) return 1;
  return static_cast<Eigen::Index>(shape_[0]);
}

Eigen::Index Tensor::cols() const {
  if (shape_.empty()) return 1;
  if (shape_.size() == 1) return static_cast<Eigen::Index>(shape_[0]);
  return static_cast<Eigen::Index>(data_.size() / shape_[0]);
}

Eigen::Map<Matrix> Tensor::matrix() { return {data_.data(), rows(), cols()}; }

Eigen::Map<const Matrix> Tensor::matrix() const { return {data_.data(), rows(), cols()}; }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace varjepa
