#include "varjepa/objective.hpp"

#include "varjepa/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace varjepa {

void LossWeights::validate() const {
  const double all[] = {alpha_rec, alpha_gen, alpha_kl_sx, alpha_kl_z, alpha_kl_sy, lambda_sx, lambda_sy};
  for (double w : all) {
    if (!std::isfinite(w) || w < 0.0) throw InvalidInput("LossWeights: weights must be finite and >= 0");
  }
}

double anneal_weight(const AnnealSchedule& s, std::int64_t t) {
  if (s.anneal_steps == 0) return t >= s.start_step ? s.final_weight : 0.0;
  const double frac = static_cast<double>(std::max<std::int64_t>(t - s.start_step, 0)) / static_cast<double>(s.anneal_steps);
  return s.final_weight * std::min(frac, 1.0);
}

double LossBreakdown::weighted(const LossWeights& w) const {
  return w.alpha_rec * rec + w.alpha_gen * gen + w.alpha_kl_sx * kl_sx + w.alpha_kl_z * kl_z + w.alpha_kl_sy * kl_sy +
         w.lambda_sx * sigreg_sx + w.lambda_sy * sigreg_sy;
}

void VariantConfig::validate() const {
  weights.validate();
  if (epochs < 0) throw InvalidInput("VariantConfig: epochs must be >= 0");
  if (batch_size < 1) throw InvalidInput("VariantConfig: batch_size must be >= 1");
  if (anneal_steps_kl_sx < 0 || anneal_steps_kl_z < 0 || anneal_steps_kl_sy < 0 || anneal_start < 0) {
    throw InvalidInput("VariantConfig: anneal steps must be >= 0");
  }
  if (!(optim.lr > 0.0) || !(optim.weight_decay >= 0.0)) throw InvalidInput("VariantConfig: bad optimizer settings");
  if (sigreg.n_directions < 1) throw InvalidInput("VariantConfig: sigreg needs >= 1 direction");
  sigreg.cf.validate();
  dims.validate();
}

LossWeights VariantConfig::weights_at(std::int64_t t) const {
  LossWeights w = weights;
  if (anneal_steps_kl_sx > 0) w.alpha_kl_sx = anneal_weight({weights.alpha_kl_sx, anneal_steps_kl_sx, anneal_start}, t);
  if (anneal_steps_kl_z > 0) w.alpha_kl_z = anneal_weight({weights.alpha_kl_z, anneal_steps_kl_z, anneal_start}, t);
  if (anneal_steps_kl_sy > 0) w.alpha_kl_sy = anneal_weight({weights.alpha_kl_sy, anneal_steps_kl_sy, anneal_start}, t);
  return w;
}

VariantConfig make_variant(char id) {
  VariantConfig c;
  c.id = std::string(1, id);
  LossWeights& w = c.weights;
  constexpr double lam = 10.0;
  switch (id) {
    case 'A':
      break;
    case 'B':
      w.lambda_sx = lam;
      break;
    case 'C':
      w.lambda_sy = lam;
      break;
    case 'D':
      w.lambda_sx = w.lambda_sy = lam;
      break;
    case 'E':
      w.alpha_kl_sx = 0.0;
      break;
    case 'F':
      w.alpha_kl_sy = 0.0;
      break;
    case 'G':
      w.alpha_rec = w.alpha_gen = 0.0;
      break;
    case 'H':
      w.alpha_rec = w.alpha_gen = 0.0;
      w.lambda_sx = w.lambda_sy = lam;
      break;
    case 'I':
      w.alpha_kl_sx = w.alpha_kl_z = w.alpha_kl_sy = 0.0;
      break;
    case 'J':
      w.alpha_kl_sx = w.alpha_kl_z = w.alpha_kl_sy = 0.0;
      w.lambda_sx = w.lambda_sy = lam;
      break;
    default:
      throw ConfigError(std::string("unknown variant '") + id + "' (expected A-J)");
  }
  return c;
}

ElboVars elbo_terms(const VarJepaModel& m, const VarMap& vars, const BatchLatents& lat, const Matrix& x,
                    const Matrix& y) {
  const ad::Var x_mean = decode_x(m, vars, lat.s_x);
  const ad::Var y_mean = decode_y(m, vars, lat.s_y);
  ElboVars t{
      ad::mean(ad::row_sum(ad::gauss_nll_elem(x, x_mean, vars.at("log_var_x")))),
      ad::mean(ad::row_sum(ad::gauss_nll_elem(y, y_mean, vars.at("log_var_y")))),
      ad::mean(ad::row_sum(ad::kl_std_elem(lat.q_sx.mean, lat.q_sx.log_var))),
      ad::mean(ad::row_sum(ad::kl_std_elem(lat.q_z.mean, lat.q_z.log_var))),
      ad::mean(ad::row_sum(ad::kl_diag_elem(lat.q_sy.mean, lat.q_sy.log_var, lat.p_sy.mean, lat.p_sy.log_var))),
  };
  return t;
}

namespace {

void add_term(ad::Var& acc, bool& has, ad::Var term, double w) {
  if (w == 0.0) return;
  ad::Var t = ad::scale(term, w);
  acc = has ? ad::add(acc, t) : t;
  has = true;
}

}  // namespace

LossGraph build_loss(const VarJepaModel& m, const VarMap& vars, ad::Graph& g, const Matrix& x, const Matrix& y,
                     const NoiseBatch& noise, const LossWeights& w, const ProjectionSet* proj_sx,
                     const ProjectionSet* proj_sy, const EppsPulleyConfig& cf) {
  const BatchLatents lat = forward_latents(m, vars, g, x, y, noise);
  LossGraph out{elbo_terms(m, vars, lat, x, y), std::nullopt, std::nullopt, g.constant(Matrix::Zero(1, 1), "zero"), {}};
  if (w.lambda_sx != 0.0 && proj_sx != nullptr) out.sigreg_sx = ad::sigreg(lat.s_x, *proj_sx, cf);
  if (w.lambda_sy != 0.0 && proj_sy != nullptr) out.sigreg_sy = ad::sigreg(lat.s_y, *proj_sy, cf);

  ad::Var total = out.total;
  bool has = false;
  add_term(total, has, out.terms.rec, w.alpha_rec);
  add_term(total, has, out.terms.gen, w.alpha_gen);
  add_term(total, has, out.terms.kl_sx, w.alpha_kl_sx);
  add_term(total, has, out.terms.kl_z, w.alpha_kl_z);
  add_term(total, has, out.terms.kl_sy, w.alpha_kl_sy);
  if (out.sigreg_sx) add_term(total, has, *out.sigreg_sx, w.lambda_sx);
  if (out.sigreg_sy) add_term(total, has, *out.sigreg_sy, w.lambda_sy);
  out.total = total;

  LossBreakdown& v = out.values;
  v.rec = out.terms.rec.scalar();
  v.gen = out.terms.gen.scalar();
  v.kl_sx = out.terms.kl_sx.scalar();
  v.kl_z = out.terms.kl_z.scalar();
  v.kl_sy = out.terms.kl_sy.scalar();
  v.sigreg_sx = out.sigreg_sx ? out.sigreg_sx->scalar() : 0.0;
  v.sigreg_sy = out.sigreg_sy ? out.sigreg_sy->scalar() : 0.0;
  v.total = v.weighted(w);
  return out;
}

LossBreakdown elbo_loss(const ElboParts& p, const LossWeights& w) {
  const std::size_t n = p.q_sx.size();
  if (n == 0) throw InvalidInput("elbo_loss: empty batch");
  if (p.q_z.size() != n || p.q_sy.size() != n || p.p_sy.size() != n || static_cast<std::size_t>(p.x.rows()) != n ||
      static_cast<std::size_t>(p.y.rows()) != n || p.x_mean.rows() != p.x.rows() || p.y_mean.rows() != p.y.rows()) {
    throw InvalidInput("elbo_loss: batch size mismatch");
  }
  LossBreakdown b;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    b.rec += gaussian_nll(p.x.row(r).transpose(), p.x_mean.row(r).transpose(), p.var_x);
    b.gen += gaussian_nll(p.y.row(r).transpose(), p.y_mean.row(r).transpose(), p.var_y);
    b.kl_sx += kl_to_standard(p.q_sx[i]);
    b.kl_z += kl_to_standard(p.q_z[i]);
    b.kl_sy += kl_diag(p.q_sy[i], p.p_sy[i]);
  }
  const double dn = static_cast<double>(n);
  b.rec /= dn;
  b.gen /= dn;
  b.kl_sx /= dn;
  b.kl_z /= dn;
  b.kl_sy /= dn;
  b.total = b.weighted(w);
  return b;
}

LossBreakdown elbo_loss(const VarJepaModel& m, const std::vector<LatentBundle>& bundles, const Matrix& x,
                        const Matrix& y, const LossWeights& w) {
  ElboParts p;
  const auto n = static_cast<Eigen::Index>(bundles.size());
  Matrix sx(n, m.dims.d_s), sy(n, m.dims.d_s);
  for (Eigen::Index i = 0; i < n; ++i) {
    const LatentBundle& b = bundles[static_cast<std::size_t>(i)];
    p.q_sx.push_back(b.q_sx);
    p.q_z.push_back(b.q_z);
    p.q_sy.push_back(b.q_sy);
    p.p_sy.push_back(b.p_sy);
    sx.row(i) = b.s_x.transpose();
    sy.row(i) = b.s_y.transpose();
  }
  p.x = x;
  p.y = y;
  p.x_mean = mlp_forward(m.dec_x, m.params, "dec_x", sx);
  p.y_mean = mlp_forward(m.dec_y, m.params, "dec_y", sy);
  p.var_x = std::exp(m.log_var_x());
  p.var_y = std::exp(m.log_var_y());
  return elbo_loss(p, w);
}

ad::Var jepa_baseline_loss(ad::Var predicted, ad::Var target) {
  if (predicted.rows() != target.rows() || predicted.cols() != target.cols()) {
    throw InvalidInput("jepa_baseline_loss: shape mismatch");
  }
  return ad::mean(ad::row_sum(ad::square(ad::sub(predicted, ad::stop_gradient(target)))));
}

double jepa_baseline_loss(const Matrix& predicted, const Matrix& target) {
  if (predicted.rows() != target.rows() || predicted.cols() != target.cols()) {
    throw InvalidInput("jepa_baseline_loss: shape mismatch");
  }
  if (predicted.rows() == 0) throw InvalidInput("jepa_baseline_loss: empty batch");
  return (predicted - target).rowwise().squaredNorm().sum() / static_cast<double>(predicted.rows());
}

namespace {

Matrix gather_rows(const Matrix& m, const std::vector<Eigen::Index>& idx, std::size_t lo, std::size_t hi) {
  Matrix out(static_cast<Eigen::Index>(hi - lo), m.cols());
  for (std::size_t i = lo; i < hi; ++i) out.row(static_cast<Eigen::Index>(i - lo)) = m.row(idx[i]);
  return out;
}

const char* first_bad_term(const LossBreakdown& v) {
  const std::pair<const char*, double> terms[] = {{"rec", v.rec},           {"gen", v.gen},
                                                  {"kl_sx", v.kl_sx},       {"kl_z", v.kl_z},
                                                  {"kl_sy", v.kl_sy},       {"sigreg_sx", v.sigreg_sx},
                                                  {"sigreg_sy", v.sigreg_sy}, {"total", v.total}};
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) return name;
  }
  return nullptr;
}

}  // namespace

TrainResult train_run(const VariantConfig& cfg, const PairDataset& data, const DiagnosticsHook& hook) {
  cfg.validate();
  const Eigen::Index n = data.size();
  if (n == 0) throw InvalidInput("train_run: empty dataset");
  if (data.x.cols() != cfg.dims.d_obs || data.y.cols() != cfg.dims.d_obs) {
    throw InvalidInput("train_run: dataset dimension does not match model");
  }

  TrainResult res{VarJepaModel::init(cfg.dims, cfg.seed), {}, {}};
  AdamWState opt(res.model.params, cfg.optim);
  const Rng shuffle_root(cfg.seed, Stream::shuffle);
  const Rng noise_root(cfg.seed, Stream::train_noise);
  const Rng proj_root(cfg.seed, Stream::projection);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::int64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng sh = shuffle_root.split(static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[sh.below(i + 1)]);

    const auto bs = static_cast<std::size_t>(cfg.batch_size);
    int batch = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += bs, ++batch, ++step) {
      const std::size_t hi = std::min(order.size(), lo + bs);
      const Matrix x = gather_rows(data.x, order, lo, hi);
      const Matrix y = gather_rows(data.y, order, lo, hi);
      const LossWeights w = cfg.weights_at(step);
      Rng nr = noise_root.split(static_cast<std::uint64_t>(step));
      const NoiseBatch noise = NoiseBatch::draw(x.rows(), cfg.dims, nr);

      std::optional<ProjectionSet> psx, psy;
      if (w.lambda_sx != 0.0) {
        Rng r = proj_root.split(2 * static_cast<std::uint64_t>(step));
        psx = sample_directions(r, cfg.sigreg.n_directions, cfg.dims.d_s);
      }
      if (w.lambda_sy != 0.0) {
        Rng r = proj_root.split(2 * static_cast<std::uint64_t>(step) + 1);
        psy = sample_directions(r, cfg.sigreg.n_directions, cfg.dims.d_s);
      }

      const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch);
      try {
        ad::Graph g;
        const VarMap vars = bind_params(g, res.model.params, true);
        const LossGraph lg = build_loss(res.model, vars, g, x, y, noise, w, psx ? &*psx : nullptr,
                                        psy ? &*psy : nullptr, cfg.sigreg.cf);
        if (const char* bad = first_bad_term(lg.values)) {
          throw NumericalError(std::string("non-finite loss term '") + bad + "'");
        }
        g.backward(lg.total);
        const ParamStore grads = collect_grads(vars, res.model.params);
        adamw_step(res.model.params, grads, opt);
        if (!res.model.params.all_finite()) throw NumericalError("non-finite parameters after update");
        res.losses.push_back({epoch, step, lg.values});
      } catch (const NumericalError& e) {
        throw NumericalError(where + ": " + e.what());
      }
    }
    if (hook) {
      if (auto rec = hook(epoch, res.model)) res.records.push_back(*rec);
    }
  }
  return res;
}

DiagnosticsHook standard_diagnostics_hook(const PairDataset& eval, const VariantConfig& cfg, std::uint64_t diag_seed,
                                          EmbeddingSource source) {
  const ProjectionSet proj = sample_directions(diag_seed, cfg.sigreg.n_directions, cfg.dims.d_s);
  Rng r = Rng(diag_seed, Stream::probe).split(1);
  const NoiseBatch draws = NoiseBatch::draw(eval.size(), cfg.dims, r);
  return [&eval, proj, draws, source, cf = cfg.sigreg.cf, probe = cfg.probe](int epoch, const VarJepaModel& m) {
    return std::optional<DiagnosticsRecord>(epoch_diagnostics(m, eval, proj, cf, probe, epoch, source, &draws));
  };
}

std::vector<std::string> loss_csv_header() {
  return {"epoch", "step", "rec", "gen", "kl_sx", "kl_z", "kl_sy", "sigreg_sx", "sigreg_sy", "total"};
}

}  // namespace varjepa
