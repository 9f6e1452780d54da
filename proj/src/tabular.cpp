#include "varjepa/tabular.hpp"

#include "varjepa/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace varjepa {

int FeatureSchema::output_width() const {
  return n_numeric + std::accumulate(cat_cards.begin(), cat_cards.end(), 0);
}

int FeatureSchema::encoding_width() const {
  return 2 * n_numeric + std::accumulate(cat_cards.begin(), cat_cards.end(), 0) + n_categorical();
}

void FeatureSchema::validate() const {
  if (n_numeric < 0) throw InvalidInput("FeatureSchema: negative numeric count");
  if (n_features() < 1) throw InvalidInput("FeatureSchema: no features");
  for (int c : cat_cards) {
    if (c < 2) throw InvalidInput("FeatureSchema: categorical cardinality must be >= 2");
  }
}

FeatureSchema FeatureSchema::of(const TabularDataset& data) {
  FeatureSchema s{static_cast<int>(data.numeric.cols()), data.cat_cards};
  s.validate();
  return s;
}

void MaskRatios::validate(int D) const {
  const double all[] = {ctx_min, ctx_max, trg_min, trg_max};
  for (double r : all) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("mask ratios must lie in [0, 1]");
  }
  if (ctx_min > ctx_max || trg_min > trg_max) throw ConfigError("mask ratio minimum exceeds maximum");
  const int lo_ctx = static_cast<int>(std::floor(D * ctx_min));
  const int lo_trg = static_cast<int>(std::floor(D * trg_min));
  if (lo_ctx + lo_trg > D) throw ConfigError("mask ratios infeasible: minimum sizes exceed feature count");
  if (static_cast<int>(std::floor(D * ctx_max)) < 1 || static_cast<int>(std::floor(D * trg_max)) < 1) {
    throw ConfigError("mask ratios infeasible: context and target need at least one feature");
  }
}

std::pair<int, int> sample_mask_sizes(int D, const MaskRatios& r, Rng& rng, int max_retries) {
  r.validate(D);
  const int c_lo = static_cast<int>(std::floor(D * r.ctx_min)), c_hi = static_cast<int>(std::floor(D * r.ctx_max));
  const int t_lo = static_cast<int>(std::floor(D * r.trg_min)), t_hi = static_cast<int>(std::floor(D * r.trg_max));
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    const int mc = c_lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(c_hi - c_lo + 1)));
    const int mt = t_lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(t_hi - t_lo + 1)));
    if (mc >= 1 && mt >= 1 && mc + mt <= D) return {mc, mt};
  }
  throw ConfigError("mask collation: no feasible context/target sizes after " + std::to_string(max_retries) +
                    " retries");
}

MaskPair draw_masks(int D, int m_ctx, int m_trg, int K, Rng& rng) {
  if (m_ctx < 1 || m_trg < 1 || m_ctx + m_trg > D || K < 1) throw InvalidInput("draw_masks: infeasible sizes");
  std::vector<int> perm(static_cast<std::size_t>(D));
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = 0; i < m_ctx; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(D - i)));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  MaskPair mp;
  mp.ctx.assign(perm.begin(), perm.begin() + m_ctx);
  std::sort(mp.ctx.begin(), mp.ctx.end());
  const std::vector<int> rest(perm.begin() + m_ctx, perm.end());
  const int R = static_cast<int>(rest.size());
  for (int k = 0; k < K; ++k) {
    std::vector<int> pool = rest;
    for (int i = 0; i < m_trg; ++i) {
      const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(R - i)));
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    pool.resize(static_cast<std::size_t>(m_trg));
    std::sort(pool.begin(), pool.end());
    mp.trg.push_back(std::move(pool));
  }
  return mp;
}

MaskPair collate_masks(int D, const MaskRatios& r, int K, Rng& rng, int max_retries) {
  const auto [mc, mt] = sample_mask_sizes(D, r, rng, max_retries);
  return draw_masks(D, mc, mt, K, rng);
}

std::vector<MaskPair> collate_batch(int batch, int D, const MaskRatios& r, int K, Rng& rng, int max_retries) {
  const auto [mc, mt] = sample_mask_sizes(D, r, rng, max_retries);
  std::vector<MaskPair> out;
  out.reserve(static_cast<std::size_t>(batch));
  for (int n = 0; n < batch; ++n) out.push_back(draw_masks(D, mc, mt, K, rng));
  return out;
}

void TabularDims::validate() const {
  if (latent < 1 || aux < 1 || hidden < 1 || depth < 0) throw InvalidInput("TabularDims: invalid dimensions");
}

namespace {

MlpSpec net(const TabularDims& d, int in, int out) {
  return MlpSpec{in, std::vector<int>(static_cast<std::size_t>(d.depth), d.hidden), out, d.activation, Activation::none};
}

TabularModel skeleton(const FeatureSchema& s, const TabularDims& d) {
  s.validate();
  d.validate();
  TabularModel m;
  m.schema = s;
  m.dims = d;
  const int D = s.n_features(), F = D * d.latent, E = s.encoding_width();
  m.ctx = net(d, E, 2 * F);
  m.aux = net(d, d.latent, 2 * d.aux);
  m.trg = net(d, d.latent + d.aux + E, 2 * F);
  m.pred = net(d, d.latent + d.aux + D, 2 * F);
  return m;
}

const ad::Var& var(const VarMap& vars, const char* name) {
  auto it = vars.find(name);
  if (it == vars.end()) throw InvalidInput(std::string("missing parameter ") + name);
  return it->second;
}

/// Starting output column of feature j.
std::vector<int> output_offsets(const FeatureSchema& s) {
  std::vector<int> off(static_cast<std::size_t>(s.n_features()));
  int c = 0;
  for (int j = 0; j < s.n_features(); ++j) {
    off[static_cast<std::size_t>(j)] = c;
    c += s.is_numeric(j) ? 1 : s.cat_cards[static_cast<std::size_t>(j - s.n_numeric)];
  }
  return off;
}

}  // namespace

Matrix TabularModel::decoder_mask() const {
  const int d = dims.latent, D = schema.n_features();
  Matrix mask = Matrix::Zero(D * d, schema.output_width());
  const std::vector<int> off = output_offsets(schema);
  for (int j = 0; j < D; ++j) {
    const int w = schema.is_numeric(j) ? 1 : schema.cat_cards[static_cast<std::size_t>(j - schema.n_numeric)];
    mask.block(j * d, off[static_cast<std::size_t>(j)], d, w).setOnes();
  }
  return mask;
}

Matrix TabularModel::standardize(const Matrix& numeric) const {
  if (numeric.cols() != schema.n_numeric) throw InvalidInput("standardize: numeric column count mismatch");
  Matrix out = numeric.rowwise() - num_mean.transpose();
  return out.array().rowwise() / num_scale.transpose().array();
}

TabularModel TabularModel::init(const FeatureSchema& schema, const TabularDims& dims, const Vector& num_mean,
                                const Vector& num_scale, std::uint64_t seed) {
  TabularModel m = skeleton(schema, dims);
  if (num_mean.size() != schema.n_numeric || num_scale.size() != schema.n_numeric) {
    throw InvalidInput("TabularModel: standardization size mismatch");
  }
  m.num_mean = num_mean;
  m.num_scale = num_scale;
  const Rng root(seed, Stream::init);
  Rng r0 = root.split(0), r1 = root.split(1), r2 = root.split(2), r3 = root.split(3), r4 = root.split(4);
  const ParamStore a = init_mlp(m.ctx, "ctx", r0);
  const ParamStore b = init_mlp(m.aux, "aux", r1);
  const ParamStore c = init_mlp(m.trg, "trg", r2);
  const ParamStore d = init_mlp(m.pred, "pred", r3);

  const Matrix mask = m.decoder_mask();
  Tensor w({static_cast<std::size_t>(mask.rows()), static_cast<std::size_t>(mask.cols())});
  const std::vector<int> off = output_offsets(schema);
  auto wm = w.matrix();
  for (int j = 0; j < schema.n_features(); ++j) {
    const int width = schema.is_numeric(j) ? 1 : schema.cat_cards[static_cast<std::size_t>(j - schema.n_numeric)];
    const double lim = std::sqrt(6.0 / (dims.latent + width));
    for (int r = 0; r < dims.latent; ++r) {
      for (int col = 0; col < width; ++col) {
        wm(j * dims.latent + r, off[static_cast<std::size_t>(j)] + col) = lim * (2.0 * r4.uniform() - 1.0);
      }
    }
  }
  const ParamStore e({{"dec.w", std::move(w)},
                      {"dec.b", Tensor({static_cast<std::size_t>(schema.output_width())})},
                      {"log_var_x", Tensor({1})},
                      {"log_var_y", Tensor({1})}});
  m.params = ParamStore::concat({&a, &b, &c, &d, &e});
  return m;
}

std::pair<Vector, Vector> numeric_stats(const Matrix& numeric) {
  const Eigen::Index n = numeric.rows();
  if (n == 0) throw InvalidInput("numeric_stats: empty data");
  Vector mean = numeric.colwise().sum().transpose() / static_cast<double>(n);
  Vector sd(numeric.cols());
  for (Eigen::Index c = 0; c < numeric.cols(); ++c) {
    const double v = (numeric.col(c).array() - mean(c)).square().sum() / static_cast<double>(n);
    sd(c) = std::max(std::sqrt(v), 1e-8);
  }
  return {mean, sd};
}

Matrix encode_features(const FeatureSchema& s, const Matrix& num_std, const Matrix& cat, const Matrix& presence) {
  const Eigen::Index B = presence.rows();
  if (num_std.rows() != B || cat.rows() != B || num_std.cols() != s.n_numeric || cat.cols() != s.n_categorical() ||
      presence.cols() != s.n_features()) {
    throw InvalidInput("encode_features: shape mismatch");
  }
  const int nn = s.n_numeric, nc = s.n_categorical();
  const int card_total = s.output_width() - nn;
  Matrix enc = Matrix::Zero(B, s.encoding_width());
  for (Eigen::Index n = 0; n < B; ++n) {
    for (int j = 0; j < nn; ++j) {
      const double p = presence(n, j);
      enc(n, j) = p * num_std(n, j);
      enc(n, nn + j) = p;
    }
    int off = 2 * nn;
    for (int c = 0; c < nc; ++c) {
      const int card = s.cat_cards[static_cast<std::size_t>(c)];
      const double p = presence(n, nn + c);
      const auto code = static_cast<long>(cat(n, c));
      if (code < 0 || code >= card) throw InvalidInput("encode_features: categorical code out of range");
      enc(n, off + code) = p;
      enc(n, 2 * nn + card_total + c) = p;
      off += card;
    }
  }
  return enc;
}

namespace {

struct MaskMatrices {
  Matrix ctx_presence;  // [B x D] 0/1
  Matrix ctx_weight;    // [B x D] 1/M_ctx on context
  Matrix ctx_pool;      // [B x D*d] 1/M_ctx on context blocks
  Matrix trg_indicator; // [B*K x D] 0/1
  Matrix trg_weight;    // [B*K x D] 1/(K M_trg) on targets
};

MaskMatrices mask_matrices(const std::vector<MaskPair>& masks, int D, int d) {
  const auto B = static_cast<Eigen::Index>(masks.size());
  if (B == 0) throw InvalidInput("tabular: empty batch");
  const int K = masks.front().k();
  MaskMatrices mm{Matrix::Zero(B, D), Matrix::Zero(B, D), Matrix::Zero(B, D * d), Matrix::Zero(B * K, D),
                  Matrix::Zero(B * K, D)};
  for (Eigen::Index n = 0; n < B; ++n) {
    const MaskPair& mp = masks[static_cast<std::size_t>(n)];
    if (mp.k() != K || mp.m_ctx() < 1 || mp.m_trg() < 1) throw InvalidInput("tabular: inconsistent masks in batch");
    const double wc = 1.0 / mp.m_ctx();
    for (int j : mp.ctx) {
      if (j < 0 || j >= D) throw InvalidInput("tabular: mask index out of range");
      mm.ctx_presence(n, j) = 1.0;
      mm.ctx_weight(n, j) = wc;
      mm.ctx_pool.block(n, j * d, 1, d).setConstant(wc);
    }
    const double wt = 1.0 / (static_cast<double>(K) * mp.m_trg());
    for (int k = 0; k < K; ++k) {
      if (mp.trg[static_cast<std::size_t>(k)].size() != static_cast<std::size_t>(mp.m_trg())) {
        throw InvalidInput("tabular: target masks differ in size");
      }
      for (int j : mp.trg[static_cast<std::size_t>(k)]) {
        if (j < 0 || j >= D) throw InvalidInput("tabular: mask index out of range");
        mm.trg_indicator(k * B + n, j) = 1.0;
        mm.trg_weight(k * B + n, j) = wt;
      }
    }
  }
  return mm;
}

Matrix pool_matrix(int D, int d) {
  Matrix P = Matrix::Zero(D * d, d);
  for (int j = 0; j < D; ++j) P.block(j * d, 0, d, d).setIdentity();
  return P;
}

Matrix tile_rows(const Matrix& a, int K) {
  Matrix out(a.rows() * K, a.cols());
  for (int k = 0; k < K; ++k) out.middleRows(k * a.rows(), a.rows()) = a;
  return out;
}

/// Per-feature NLL, [rows x D].
ad::Var feature_nll(const FeatureSchema& s, ad::Var out, ad::Var log_var, const Matrix& num_std, const Matrix& cat) {
  std::vector<ad::Var> parts;
  if (s.n_numeric > 0) parts.push_back(ad::gauss_nll_elem(num_std, ad::cols(out, 0, s.n_numeric), log_var));
  if (s.n_categorical() > 0) {
    parts.push_back(
        ad::categorical_nll_groups(ad::cols(out, s.n_numeric, s.output_width() - s.n_numeric), cat, s.cat_cards));
  }
  return parts.size() == 1 ? parts.front() : ad::hcat(parts);
}

}  // namespace

TabularLossVars tabular_loss_terms(ad::Graph& g, const ad::TabularHeads& h, const FeatureSchema& s, int d,
                                   const Matrix& num_std, const Matrix& cat, const std::vector<MaskPair>& masks) {
  const int D = s.n_features();
  const MaskMatrices mm = mask_matrices(masks, D, d);
  const auto B = static_cast<double>(masks.size());
  const int K = masks.front().k();
  const double inv_b = 1.0 / B;

  ad::Var rec = ad::scale(ad::sum(ad::mul(feature_nll(s, h.dec_x, h.log_var_x, num_std, cat),
                                          g.constant(mm.ctx_weight, "ctx_weight"))),
                          inv_b);
  ad::Var gen = ad::scale(
      ad::sum(feature_nll(s, h.dec_w, h.log_var_y, tile_rows(num_std, K), tile_rows(cat, K))),
      1.0 / (B * K * D));
  ad::Var kl_sx = ad::scale(ad::sum(ad::mul(ad::group_sum(ad::kl_std_elem(h.q_sx.mean, h.q_sx.log_var), d),
                                            g.constant(mm.ctx_weight, "ctx_weight"))),
                            inv_b);
  ad::Var kl_z = ad::scale(ad::sum(ad::kl_std_elem(h.q_z.mean, h.q_z.log_var)), inv_b);
  ad::Var klq = ad::kl_diag_elem(ad::vtile(h.q_sw.mean, K), ad::vtile(h.q_sw.log_var, K), h.p_sy.mean, h.p_sy.log_var);
  ad::Var kl_sy = ad::scale(ad::sum(ad::mul(ad::group_sum(klq, d), g.constant(mm.trg_weight, "trg_weight"))), inv_b);
  return {rec, gen, kl_sx, kl_z, kl_sy};
}

LossBreakdown tabular_losses(const TabularOutputs& o, const FeatureSchema& s, int d, const Matrix& num_std,
                             const Matrix& cat, const std::vector<MaskPair>& masks, const LossWeights& w) {
  ad::Graph g;
  auto c = [&g](const Matrix& m) { return g.constant(m, "input"); };
  ad::TabularHeads h{{c(o.q_sx_mean), c(o.q_sx_log_var)},
                     {c(o.q_z_mean), c(o.q_z_log_var)},
                     {c(o.q_sw_mean), c(o.q_sw_log_var)},
                     {c(o.p_sy_mean), c(o.p_sy_log_var)},
                     c(o.dec_x),
                     c(o.dec_w),
                     c(Matrix::Constant(1, 1, o.log_var_x)),
                     c(Matrix::Constant(1, 1, o.log_var_y))};
  const TabularLossVars t = tabular_loss_terms(g, h, s, d, num_std, cat, masks);
  LossBreakdown b;
  b.rec = t.rec.scalar();
  b.gen = t.gen.scalar();
  b.kl_sx = t.kl_sx.scalar();
  b.kl_z = t.kl_z.scalar();
  b.kl_sy = t.kl_sy.scalar();
  b.total = b.weighted(w);
  return b;
}

TabularNoise TabularNoise::zeros(int B, int K, const TabularModel& m) {
  const int F = m.flat_latent();
  return {Matrix::Zero(B, F), Matrix::Zero(B, m.dims.aux), Matrix::Zero(static_cast<Eigen::Index>(B) * K, F)};
}

TabularNoise TabularNoise::draw(int B, int K, const TabularModel& m, Rng& rng) {
  TabularNoise t = zeros(B, K, m);
  for (Matrix* mat : {&t.sx, &t.z, &t.sw}) {
    for (Eigen::Index i = 0; i < mat->size(); ++i) mat->data()[i] = rng.normal();
  }
  return t;
}

ad::TabularHeads tabular_forward(const TabularModel& m, const VarMap& vars, ad::Graph& g, const Matrix& num_std,
                                 const Matrix& cat, const std::vector<MaskPair>& masks, const TabularNoise& noise) {
  const int D = m.schema.n_features(), d = m.dims.latent, F = m.flat_latent();
  const MaskMatrices mm = mask_matrices(masks, D, d);
  const auto B = static_cast<Eigen::Index>(masks.size());
  const int K = masks.front().k();
  if (noise.sx.rows() != B || noise.sx.cols() != F || noise.z.rows() != B || noise.z.cols() != m.dims.aux ||
      noise.sw.rows() != B * K || noise.sw.cols() != F) {
    throw InvalidInput("tabular_forward: noise shape mismatch");
  }

  const Matrix enc_ctx = encode_features(m.schema, num_std, cat, mm.ctx_presence);
  const ad::GaussVars q_sx = ad::split_gaussian(mlp_forward(m.ctx, vars, "ctx", g.constant(enc_ctx, "enc_ctx")), F);
  const ad::Var s_x = ad::reparam(q_sx, noise.sx);
  const ad::Var pooled =
      ad::matmul(ad::mul(s_x, g.constant(mm.ctx_pool, "ctx_pool")), g.constant(pool_matrix(D, d), "pool"));
  const ad::GaussVars q_z = ad::split_gaussian(mlp_forward(m.aux, vars, "aux", pooled), m.dims.aux);
  const ad::Var z = ad::reparam(q_z, noise.z);

  const Matrix enc_full = encode_features(m.schema, num_std, cat, Matrix::Ones(B, D));
  const ad::GaussVars q_sw =
      ad::split_gaussian(mlp_forward(m.trg, vars, "trg", ad::hcat({pooled, z, g.constant(enc_full, "enc_full")})), F);
  const ad::GaussVars p_sy = ad::split_gaussian(
      mlp_forward(m.pred, vars, "pred",
                  ad::hcat({ad::vtile(pooled, K), ad::vtile(z, K), g.constant(mm.trg_indicator, "trg_mask")})),
      F);
  const ad::Var s_w = ad::reparam({ad::vtile(q_sw.mean, K), ad::vtile(q_sw.log_var, K)}, noise.sw);

  const ad::Var w_eff = ad::mul(var(vars, "dec.w"), g.constant(m.decoder_mask(), "dec_mask"));
  const ad::Var& b = var(vars, "dec.b");
  return {q_sx,
          q_z,
          q_sw,
          p_sy,
          ad::add_row(ad::matmul(s_x, w_eff), b),
          ad::add_row(ad::matmul(s_w, w_eff), b),
          var(vars, "log_var_x"),
          var(vars, "log_var_y")};
}

void TabularConfig::validate() const {
  dims.validate();
  weights.validate();
  if (K < 1) throw ConfigError("tabular: K must be >= 1");
  if (epochs < 0 || batch_size < 1) throw ConfigError("tabular: epochs >= 0 and batch_size >= 1 required");
  if (anneal_epochs_sx < 0 || anneal_epochs_z < 0 || anneal_epochs_sy < 0) {
    throw ConfigError("tabular: anneal epochs must be >= 0");
  }
  if (probe_every < 1 || patience < 1) throw ConfigError("tabular: probe_every and patience must be >= 1");
  if (!(probe_drop >= 0.0 && probe_drop < 1.0)) throw ConfigError("tabular: probe_drop must lie in [0, 1)");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("tabular: val_fraction must lie in (0, 1)");
  if (!(optim.lr > 0.0)) throw ConfigError("tabular: lr must be > 0");
}

namespace {

Matrix gather_rows(const Matrix& m, const std::vector<Eigen::Index>& idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

std::vector<int> gather(const std::vector<int>& v, const std::vector<Eigen::Index>& idx) {
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = v[static_cast<std::size_t>(idx[i])];
  return out;
}

std::vector<double> gather(const Vector& v, const std::vector<Eigen::Index>& idx) {
  std::vector<double> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = v(idx[i]);
  return out;
}

}  // namespace

TabularTrainResult train_tabular(const TabularConfig& cfg, const TabularDataset& data) {
  cfg.validate();
  data.validate();
  const FeatureSchema schema = FeatureSchema::of(data);
  cfg.ratios.validate(schema.n_features());
  const Eigen::Index N = data.size();
  if (N < 2) throw InvalidInput("train_tabular: need at least 2 rows");

  const auto [mean, scale] = numeric_stats(data.numeric);
  TabularTrainResult res{TabularModel::init(schema, cfg.dims, mean, scale, cfg.seed), 0, {}, {}};
  const Matrix num_std = res.model.standardize(data.numeric);
  AdamWState opt(res.model.params, cfg.optim);
  ParamStore best = res.model.params;
  double best_score = -1.0;
  int stale = 0;

  // Probe split for checkpoint selection.
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(N));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  {
    Rng r = Rng(cfg.seed, Stream::probe).split(0);
    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[r.below(i + 1)]);
  }
  const auto n_val = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::floor(cfg.val_fraction * N)), 1, N - 1);
  const std::vector<Eigen::Index> val_idx(perm.begin(), perm.begin() + n_val);
  const std::vector<Eigen::Index> fit_idx(perm.begin() + n_val, perm.end());

  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const auto steps_per_epoch = static_cast<std::int64_t>((static_cast<std::size_t>(N) + bs - 1) / bs);
  const AnnealSchedule an_sx{cfg.weights.alpha_kl_sx, cfg.anneal_epochs_sx * steps_per_epoch, 0};
  const AnnealSchedule an_z{cfg.weights.alpha_kl_z, cfg.anneal_epochs_z * steps_per_epoch, 0};
  const AnnealSchedule an_sy{cfg.weights.alpha_kl_sy, cfg.anneal_epochs_sy * steps_per_epoch, 0};

  const Rng shuffle_root(cfg.seed, Stream::shuffle);
  const Rng noise_root(cfg.seed, Stream::train_noise);
  const Rng mask_root(cfg.seed, Stream::mask);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(N));
  std::int64_t step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng sh = shuffle_root.split(static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[sh.below(i + 1)]);

    int batch = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += bs, ++batch, ++step) {
      const std::size_t hi = std::min(order.size(), lo + bs);
      const std::vector<Eigen::Index> idx(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                          order.begin() + static_cast<std::ptrdiff_t>(hi));
      const Matrix xb = gather_rows(num_std, idx);
      const Matrix cb = gather_rows(data.categorical, idx);
      const int B = static_cast<int>(idx.size());
      Rng mr = mask_root.split(static_cast<std::uint64_t>(step));
      const std::vector<MaskPair> masks =
          collate_batch(B, schema.n_features(), cfg.ratios, cfg.K, mr, cfg.max_mask_retries);
      Rng nr = noise_root.split(static_cast<std::uint64_t>(step));
      const TabularNoise noise = TabularNoise::draw(B, cfg.K, res.model, nr);

      LossWeights w = cfg.weights;
      w.alpha_kl_sx = anneal_weight(an_sx, step);
      w.alpha_kl_z = anneal_weight(an_z, step);
      w.alpha_kl_sy = anneal_weight(an_sy, step);

      try {
        ad::Graph g;
        const VarMap vars = bind_params(g, res.model.params, true);
        const ad::TabularHeads h = tabular_forward(res.model, vars, g, xb, cb, masks, noise);
        const TabularLossVars t = tabular_loss_terms(g, h, schema, cfg.dims.latent, xb, cb, masks);
        LossBreakdown v;
        v.rec = t.rec.scalar();
        v.gen = t.gen.scalar();
        v.kl_sx = t.kl_sx.scalar();
        v.kl_z = t.kl_z.scalar();
        v.kl_sy = t.kl_sy.scalar();
        v.total = v.weighted(w);
        const std::pair<const char*, double> named[] = {
            {"rec", v.rec}, {"gen", v.gen}, {"kl_sx", v.kl_sx}, {"kl_z", v.kl_z}, {"kl_sy", v.kl_sy}};
        for (const auto& [name, value] : named) {
          if (!std::isfinite(value)) throw NumericalError(std::string("non-finite loss term '") + name + "'");
        }
        ad::Var total = ad::add(ad::add(ad::add(ad::add(ad::scale(t.rec, w.alpha_rec), ad::scale(t.gen, w.alpha_gen)),
                                                ad::scale(t.kl_sx, w.alpha_kl_sx)),
                                        ad::scale(t.kl_z, w.alpha_kl_z)),
                                ad::scale(t.kl_sy, w.alpha_kl_sy));
        g.backward(total);
        adamw_step(res.model.params, collect_grads(vars, res.model.params), opt);
        if (!res.model.params.all_finite()) throw NumericalError("non-finite parameters after update");
        res.losses.push_back({epoch, step, v});
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) + ": " + e.what());
      }
    }

    if (epoch % cfg.probe_every == 0 || epoch == cfg.epochs) {
      const EmbeddingsWithUncertainty eu = extract_embeddings_uncertainty(res.model, data, UncertaintyAgg::p90);
      ProbeConfig pc = cfg.probe;
      pc.seed = cfg.seed;
      const ProbeResult pr = train_linear_probe(gather_rows(eu.embeddings, fit_idx), gather(data.label, fit_idx),
                                                gather_rows(eu.embeddings, val_idx), gather(data.label, val_idx), pc);
      const Matrix val_emb = gather_rows(eu.embeddings, val_idx);
      const std::vector<int> pred = pr.predict(val_emb);
      const std::vector<int> yv = gather(data.label, val_idx);
      TabularProbeRecord rec{epoch, accuracy(pred, yv),
                             selective_accuracy(pred, yv, gather(eu.uncertainty, val_idx), cfg.probe_drop), false};
      if (rec.filtered_val_acc > best_score) {
        best_score = rec.filtered_val_acc;
        best = res.model.params;
        res.best_epoch = epoch;
        rec.best = true;
        stale = 0;
      } else {
        ++stale;
      }
      res.probes.push_back(rec);
      if (stale >= cfg.patience) break;
    }
  }
  if (res.best_epoch > 0) res.model.params.assign(best);
  return res;
}

double nearest_rank_percentile(std::vector<double> values, double q) {
  if (values.empty()) throw InvalidInput("percentile of empty set");
  if (!(q > 0.0 && q <= 1.0)) throw InvalidInput("percentile: q must lie in (0, 1]");
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size()) - 1e-12));
  return values[std::max<std::size_t>(rank, 1) - 1];
}

EmbeddingsWithUncertainty extract_embeddings_uncertainty(const TabularModel& m, const TabularDataset& data,
                                                         UncertaintyAgg agg, Eigen::Index chunk) {
  if (chunk < 1) throw InvalidInput("extract: chunk must be >= 1");
  if (data.numeric.cols() != m.schema.n_numeric || data.categorical.cols() != m.schema.n_categorical()) {
    throw InvalidInput("extract: dataset does not match model schema");
  }
  const Eigen::Index N = data.size();
  const int D = m.schema.n_features(), F = m.flat_latent();
  const Matrix num_std = m.standardize(data.numeric);
  EmbeddingsWithUncertainty out{Matrix(N, F), Vector(N)};
  const Matrix pool = pool_matrix(D, m.dims.latent) / static_cast<double>(D);
  for (Eigen::Index lo = 0; lo < N; lo += chunk) {
    const Eigen::Index n = std::min(chunk, N - lo);
    const Matrix xb = num_std.middleRows(lo, n);
    const Matrix enc = encode_features(m.schema, xb, data.categorical.middleRows(lo, n), Matrix::Ones(n, D));
    const Matrix h_ctx = mlp_forward(m.ctx, m.params, "ctx", enc);
    const Matrix pooled = h_ctx.leftCols(F) * pool;
    const Matrix h_aux = mlp_forward(m.aux, m.params, "aux", pooled);
    Matrix in(n, m.trg.input_dim);
    in << pooled, h_aux.leftCols(m.dims.aux), enc;
    const Matrix h_trg = mlp_forward(m.trg, m.params, "trg", in);
    out.embeddings.middleRows(lo, n) = h_trg.leftCols(F);
    const Matrix sd =
        (0.5 * h_trg.rightCols(F).array().max(kLogVarMin).min(kLogVarMax)).exp().matrix();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (agg == UncertaintyAgg::mean) {
        out.uncertainty(lo + i) = sd.row(i).mean();
      } else {
        out.uncertainty(lo + i) = nearest_rank_percentile(std::vector<double>(sd.row(i).begin(), sd.row(i).end()), 0.9);
      }
    }
  }
  return out;
}

void save_tabular_model(const std::filesystem::path& path, const TabularModel& m, const nlohmann::json& meta) {
  nlohmann::json h;
  h["format"] = "varjepa-tabular-checkpoint";
  h["version"] = 1;
  h["schema"] = {{"n_numeric", m.schema.n_numeric}, {"cat_cards", m.schema.cat_cards}};
  h["dims"] = {{"latent", m.dims.latent},
               {"aux", m.dims.aux},
               {"hidden", m.dims.hidden},
               {"depth", m.dims.depth},
               {"activation", to_string(m.dims.activation)}};
  h["num_mean"] = std::vector<double>(m.num_mean.begin(), m.num_mean.end());
  h["num_scale"] = std::vector<double>(m.num_scale.begin(), m.num_scale.end());
  h["meta"] = meta;
  write_archive(path, std::move(h), m.params);
}

std::pair<TabularModel, nlohmann::json> load_tabular_model(const std::filesystem::path& path) {
  Archive a = read_archive(path);
  if (a.header.value("format", "") != "varjepa-tabular-checkpoint") {
    throw InvalidInput("not a tabular checkpoint: " + path.string());
  }
  FeatureSchema s{a.header.at("schema").at("n_numeric").get<int>(),
                  a.header.at("schema").at("cat_cards").get<std::vector<int>>()};
  const auto& hd = a.header.at("dims");
  TabularDims d{hd.at("latent").get<int>(), hd.at("aux").get<int>(), hd.at("hidden").get<int>(),
                hd.at("depth").get<int>(), activation_from_string(hd.at("activation").get<std::string>())};
  const auto mean = a.header.at("num_mean").get<std::vector<double>>();
  const auto scale = a.header.at("num_scale").get<std::vector<double>>();
  TabularModel m = TabularModel::init(s, d, Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size())),
                                      Eigen::Map<const Vector>(scale.data(), static_cast<Eigen::Index>(scale.size())), 0);
  m.params.assign(a.params);
  return {std::move(m), a.header.at("meta")};
}

}  // namespace varjepa
