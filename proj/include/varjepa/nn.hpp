#pragma once

#include "varjepa/autodiff.hpp"
#include "varjepa/rng.hpp"
#include "varjepa/tensor.hpp"

#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace varjepa {

enum class Activation { none, tanh, gelu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct MlpSpec {
  int input_dim = 1;
  std::vector<int> hidden_dims;
  int output_dim = 1;
  Activation activation = Activation::gelu;
  Activation final_activation = Activation::none;

  /// Throws InvalidInput unless every dim is >= 1.
  void validate() const;
  std::size_t n_layers() const { return hidden_dims.size() + 1; }
  std::pair<int, int> layer_shape(std::size_t l) const;
};

/// Ordered name -> Tensor slots. Names are fixed once constructed and slot
/// shapes never change; only values are mutable.
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(std::vector<std::pair<std::string, Tensor>> slots);

  std::size_t size() const { return slots_.size(); }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const std::string& name(std::size_t i) const { return slots_[i].first; }
  Tensor& operator[](std::size_t i) { return slots_[i].second; }
  const Tensor& operator[](std::size_t i) const { return slots_[i].second; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  /// Copies values from `other`; names and shapes must match exactly.
  void assign(const ParamStore& other);
  /// Same names and shapes, all zeros.
  ParamStore zeros_like() const;
  std::size_t total_size() const;
  bool all_finite() const;

  /// Merge stores with disjoint names, preserving order.
  static ParamStore concat(const std::vector<const ParamStore*>& parts);

  friend bool operator==(const ParamStore& a, const ParamStore& b) { return a.slots_ == b.slots_; }

 private:
  std::vector<std::pair<std::string, Tensor>> slots_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// fan_in_uniform: weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
/// xavier_uniform: weights ~ U(-a, a), a = sqrt(6 / (fan_in + fan_out)); zero biases.
enum class InitScheme { fan_in_uniform, xavier_uniform };

/// Slot names are "{prefix}.w{l}" ([in x out]) and "{prefix}.b{l}" ([out]).
ParamStore init_mlp(const MlpSpec& spec, const std::string& prefix, Rng& rng,
                    InitScheme scheme = InitScheme::fan_in_uniform);
ParamStore zero_mlp(const MlpSpec& spec, const std::string& prefix);

Matrix apply_activation(Activation a, const Matrix& x);

/// Value-only forward pass.
Matrix mlp_forward(const MlpSpec& spec, const ParamStore& params, const std::string& prefix, const Matrix& input);

using VarMap = std::map<std::string, ad::Var>;

/// Put every slot on the graph as a leaf.
VarMap bind_params(ad::Graph& g, const ParamStore& params, bool requires_grad);
/// Gradients of bound leaves, shaped like `params` (zeros for untouched slots).
ParamStore collect_grads(const VarMap& vars, const ParamStore& params);

ad::Var mlp_forward(const MlpSpec& spec, const VarMap& vars, const std::string& prefix, ad::Var input);

}  // namespace varjepa
