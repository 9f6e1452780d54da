#pragma once

#include "varjepa/autodiff.hpp"
#include "varjepa/nn.hpp"

#include <functional>

namespace varjepa {

/// Builds a scalar loss on `g` from bound parameters.
using LossFn = std::function<ad::Var(ad::Graph& g, const VarMap& params)>;

struct GradResult {
  double loss = 0.0;
  ParamStore grads;
};

/// Exact reverse-mode gradient of `loss_fn` at `params`.
GradResult grad(const LossFn& loss_fn, const ParamStore& params);

/// Loss value only (no tape for gradients).
double eval_loss(const LossFn& loss_fn, const ParamStore& params);

/// max over entries of |analytic - central| / (|analytic| + |central| + 1e-12).
double finite_diff_check(const LossFn& loss_fn, const ParamStore& params, double step);

/// As above, but only `max_entries` entries per slot chosen with `seed`
/// (all entries when a slot is smaller).
double finite_diff_check(const LossFn& loss_fn, const ParamStore& params, double step, std::size_t max_entries,
                         std::uint64_t seed);

}  // namespace varjepa
