#pragma once

#include "varjepa/nn.hpp"

#include <cstdint>

namespace varjepa {

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamWState {
  AdamWConfig cfg;
  ParamStore m;
  ParamStore v;
  std::int64_t step = 0;

  AdamWState() = default;
  AdamWState(const ParamStore& params, AdamWConfig c) : cfg(c), m(params.zeros_like()), v(params.zeros_like()) {}
};

/// Decoupled weight decay (p <- p - lr*wd*p) followed by the bias-corrected
/// Adam update. Decay applies to every slot, biases included.
void adamw_step(ParamStore& params, const ParamStore& grads, AdamWState& state);

}  // namespace varjepa
