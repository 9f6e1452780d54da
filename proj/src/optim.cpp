#include "varjepa/optim.hpp"

#include "varjepa/errors.hpp"

#include <cmath>

namespace varjepa {

void adamw_step(ParamStore& params, const ParamStore& grads, AdamWState& state) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw InvalidInput("adamw_step: parameter/gradient/state slot count mismatch");
  }
  const AdamWConfig& c = state.cfg;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    const auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    if (g.size() != p.size() || m.size() != p.size()) throw InvalidInput("adamw_step: shape mismatch at " + params.name(i));
    for (std::size_t k = 0; k < p.size(); ++k) {
      p[k] -= c.lr * c.weight_decay * p[k];
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double mh = m[k] / bc1;
      const double vh = v[k] / bc2;
      p[k] -= c.lr * mh / (std::sqrt(vh) + c.eps);
    }
  }
}

}  // namespace varjepa
