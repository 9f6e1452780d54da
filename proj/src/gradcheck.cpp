#include "varjepa/gradcheck.hpp"

#include "varjepa/errors.hpp"
#include "varjepa/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace varjepa {

GradResult grad(const LossFn& loss_fn, const ParamStore& params) {
  ad::Graph g;
  VarMap vars = bind_params(g, params, true);
  ad::Var loss = loss_fn(g, vars);
  if (loss.rows() != 1 || loss.cols() != 1) throw InvalidInput("grad: loss must be scalar");
  g.backward(loss);
  return {loss.scalar(), collect_grads(vars, params)};
}

double eval_loss(const LossFn& loss_fn, const ParamStore& params) {
  ad::Graph g;
  VarMap vars = bind_params(g, params, false);
  return loss_fn(g, vars).scalar();
}

namespace {

double check_entries(const LossFn& loss_fn, const ParamStore& params, double step,
                     const std::vector<std::vector<std::size_t>>& entries) {
  if (!(step > 0.0)) throw InvalidInput("finite_diff_check: step must be > 0");
  const GradResult analytic = grad(loss_fn, params);
  ParamStore probe = params;
  double worst = 0.0;
  for (std::size_t s = 0; s < params.size(); ++s) {
    for (std::size_t k : entries[s]) {
      const double orig = probe[s][k];
      probe[s][k] = orig + step;
      const double fp = eval_loss(loss_fn, probe);
      probe[s][k] = orig - step;
      const double fm = eval_loss(loss_fn, probe);
      probe[s][k] = orig;
      const double central = (fp - fm) / (2.0 * step);
      const double a = analytic.grads[s][k];
      worst = std::max(worst, std::abs(a - central) / (std::abs(a) + std::abs(central) + 1e-12));
    }
  }
  return worst;
}

}  // namespace

double finite_diff_check(const LossFn& loss_fn, const ParamStore& params, double step) {
  std::vector<std::vector<std::size_t>> entries(params.size());
  for (std::size_t s = 0; s < params.size(); ++s) {
    entries[s].resize(params[s].size());
    std::iota(entries[s].begin(), entries[s].end(), std::size_t{0});
  }
  return check_entries(loss_fn, params, step, entries);
}

double finite_diff_check(const LossFn& loss_fn, const ParamStore& params, double step, std::size_t max_entries,
                         std::uint64_t seed) {
  Rng rng(seed, Stream::probe);
  std::vector<std::vector<std::size_t>> entries(params.size());
  for (std::size_t s = 0; s < params.size(); ++s) {
    std::vector<std::size_t> all(params[s].size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (all.size() > max_entries) {
      // partial Fisher-Yates
      for (std::size_t i = 0; i < max_entries; ++i) {
        std::swap(all[i], all[i + rng.below(all.size() - i)]);
      }
      all.resize(max_entries);
    }
    entries[s] = std::move(all);
  }
  return check_entries(loss_fn, params, step, entries);
}

}  // namespace varjepa
