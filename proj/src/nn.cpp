#include "varjepa/nn.hpp"

#include "varjepa/errors.hpp"

#include <cmath>
#include <numbers>

namespace varjepa {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::none:
      return "none";
    case Activation::tanh:
      return "tanh";
    case Activation::gelu:
      return "gelu";
  }
  return "none";
}

Activation activation_from_string(const std::string& s) {
  if (s == "none") return Activation::none;
  if (s == "tanh") return Activation::tanh;
  if (s == "gelu") return Activation::gelu;
  throw ConfigError("unknown activation '" + s + "'");
}

void MlpSpec::validate() const {
  if (input_dim < 1 || output_dim < 1) throw InvalidInput("MlpSpec: dims must be >= 1");
  for (int h : hidden_dims) {
    if (h < 1) throw InvalidInput("MlpSpec: hidden dims must be >= 1");
  }
}

std::pair<int, int> MlpSpec::layer_shape(std::size_t l) const {
  const int in = l == 0 ? input_dim : hidden_dims[l - 1];
  const int out = l == hidden_dims.size() ? output_dim : hidden_dims[l];
  return {in, out};
}

ParamStore::ParamStore(std::vector<std::pair<std::string, Tensor>> slots) : slots_(std::move(slots)) {
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (!index_.emplace(slots_[i].first, i).second) throw InvalidInput("ParamStore: duplicate name " + slots_[i].first);
  }
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidInput("ParamStore: no slot named " + name);
  return slots_[it->second].second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidInput("ParamStore: no slot named " + name);
  return slots_[it->second].second;
}

void ParamStore::assign(const ParamStore& other) {
  if (other.size() != size()) throw InvalidInput("ParamStore::assign: slot count mismatch");
  for (std::size_t i = 0; i < size(); ++i) {
    if (other.slots_[i].first != slots_[i].first || other.slots_[i].second.shape() != slots_[i].second.shape()) {
      throw InvalidInput("ParamStore::assign: slot mismatch at " + slots_[i].first);
    }
    slots_[i].second = other.slots_[i].second;
  }
}

ParamStore ParamStore::zeros_like() const {
  std::vector<std::pair<std::string, Tensor>> z;
  z.reserve(slots_.size());
  for (const auto& [n, t] : slots_) z.emplace_back(n, Tensor(t.shape()));
  return ParamStore(std::move(z));
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& s : slots_) n += s.second.size();
  return n;
}

bool ParamStore::all_finite() const {
  for (const auto& s : slots_) {
    if (!s.second.all_finite()) return false;
  }
  return true;
}

ParamStore ParamStore::concat(const std::vector<const ParamStore*>& parts) {
  std::vector<std::pair<std::string, Tensor>> all;
  for (const ParamStore* p : parts) {
    for (const auto& s : p->slots_) all.push_back(s);
  }
  return ParamStore(std::move(all));
}

namespace {

std::string wname(const std::string& prefix, std::size_t l) { return prefix + ".w" + std::to_string(l); }
std::string bname(const std::string& prefix, std::size_t l) { return prefix + ".b" + std::to_string(l); }

Activation layer_activation(const MlpSpec& spec, std::size_t l) {
  return l + 1 == spec.n_layers() ? spec.final_activation : spec.activation;
}

}  // namespace

ParamStore init_mlp(const MlpSpec& spec, const std::string& prefix, Rng& rng, InitScheme scheme) {
  spec.validate();
  std::vector<std::pair<std::string, Tensor>> slots;
  for (std::size_t l = 0; l < spec.n_layers(); ++l) {
    const auto [in, out] = spec.layer_shape(l);
    const bool xavier = scheme == InitScheme::xavier_uniform;
    const double a = xavier ? std::sqrt(6.0 / (in + out)) : 1.0 / std::sqrt(static_cast<double>(in));
    Tensor w({static_cast<std::size_t>(in), static_cast<std::size_t>(out)});
    for (auto& v : w.data()) v = a * (2.0 * rng.uniform() - 1.0);
    Tensor b({static_cast<std::size_t>(out)});
    if (!xavier) {
      for (auto& v : b.data()) v = a * (2.0 * rng.uniform() - 1.0);
    }
    slots.emplace_back(wname(prefix, l), std::move(w));
    slots.emplace_back(bname(prefix, l), std::move(b));
  }
  return ParamStore(std::move(slots));
}

ParamStore zero_mlp(const MlpSpec& spec, const std::string& prefix) {
  spec.validate();
  std::vector<std::pair<std::string, Tensor>> slots;
  for (std::size_t l = 0; l < spec.n_layers(); ++l) {
    const auto [in, out] = spec.layer_shape(l);
    slots.emplace_back(wname(prefix, l), Tensor({static_cast<std::size_t>(in), static_cast<std::size_t>(out)}));
    slots.emplace_back(bname(prefix, l), Tensor({static_cast<std::size_t>(out)}));
  }
  return ParamStore(std::move(slots));
}

Matrix apply_activation(Activation a, const Matrix& x) {
  switch (a) {
    case Activation::none:
      return x;
    case Activation::tanh:
      return x.array().tanh();
    case Activation::gelu: {
      Matrix y(x.rows(), x.cols());
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double v = x.data()[i];
        y.data()[i] = v * (0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 * 0.5)));
      }
      return y;
    }
  }
  return x;
}

Matrix mlp_forward(const MlpSpec& spec, const ParamStore& params, const std::string& prefix, const Matrix& input) {
  if (input.cols() != spec.input_dim) {
    throw InvalidInput("mlp_forward(" + prefix + "): expected input dim " + std::to_string(spec.input_dim) + ", got " +
                       std::to_string(input.cols()));
  }
  Matrix h = input;
  for (std::size_t l = 0; l < spec.n_layers(); ++l) {
    const Tensor& w = params.at(wname(prefix, l));
    const Tensor& b = params.at(bname(prefix, l));
    Matrix z = h * w.matrix();
    z.rowwise() += b.matrix().row(0);
    h = apply_activation(layer_activation(spec, l), z);
  }
  return h;
}

VarMap bind_params(ad::Graph& g, const ParamStore& params, bool requires_grad) {
  VarMap vars;
  for (std::size_t i = 0; i < params.size(); ++i) {
    vars.emplace(params.name(i), g.leaf(params[i].to_matrix(), requires_grad));
  }
  return vars;
}

ParamStore collect_grads(const VarMap& vars, const ParamStore& params) {
  ParamStore out = params.zeros_like();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto it = vars.find(params.name(i));
    if (it == vars.end()) continue;
    const Matrix& gr = it->second.grad();
    if (gr.size() == 0) continue;
    auto dst = out[i].matrix();
    dst = gr;
  }
  return out;
}

namespace {

const ad::Var& lookup(const VarMap& vars, const std::string& name) {
  auto it = vars.find(name);
  if (it == vars.end()) throw InvalidInput("no bound parameter named " + name);
  return it->second;
}

ad::Var apply_activation(Activation a, ad::Var x) {
  switch (a) {
    case Activation::none:
      return x;
    case Activation::tanh:
      return ad::tanh(x);
    case Activation::gelu:
      return ad::gelu(x);
  }
  return x;
}

}  // namespace

ad::Var mlp_forward(const MlpSpec& spec, const VarMap& vars, const std::string& prefix, ad::Var input) {
  if (input.cols() != spec.input_dim) {
    throw InvalidInput("mlp_forward(" + prefix + "): expected input dim " + std::to_string(spec.input_dim) + ", got " +
                       std::to_string(input.cols()));
  }
  ad::Var h = input;
  for (std::size_t l = 0; l < spec.n_layers(); ++l) {
    ad::Var z = ad::add_row(ad::matmul(h, lookup(vars, wname(prefix, l))), lookup(vars, bname(prefix, l)));
    h = apply_activation(layer_activation(spec, l), z);
  }
  return h;
}

}  // namespace varjepa
