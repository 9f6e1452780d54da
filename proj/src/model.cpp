#include "varjepa/model.hpp"

#include "varjepa/archive.hpp"
#include "varjepa/errors.hpp"
#include "varjepa/rng.hpp"

#include <cmath>

namespace varjepa {

void ModelDims::validate() const {
  if (d_obs < 1 || d_s < 1 || d_z < 1 || hidden < 1 || depth < 0) throw InvalidInput("ModelDims: invalid dimensions");
}

namespace {

MlpSpec net(const ModelDims& d, int in, int out) {
  return MlpSpec{in, std::vector<int>(static_cast<std::size_t>(d.depth), d.hidden), out, d.activation, Activation::none};
}

VarJepaModel skeleton(const ModelDims& d) {
  d.validate();
  VarJepaModel m;
  m.dims = d;
  m.ctx = net(d, d.d_obs, 2 * d.d_s);
  m.aux = net(d, d.d_s, 2 * d.d_z);
  m.trg = net(d, d.d_s + d.d_z + d.d_obs, 2 * d.d_s);
  m.pred = net(d, d.d_s + d.d_z, 2 * d.d_s);
  m.dec_x = net(d, d.d_s, d.d_obs);
  m.dec_y = net(d, d.d_s, d.d_obs);
  return m;
}

ParamStore scalars() {
  return ParamStore({{"log_var_x", Tensor({1})}, {"log_var_y", Tensor({1})}});
}


void check_rows(const Matrix& a, Eigen::Index cols, const char* what) {
  if (a.cols() != cols) {
    throw InvalidInput(std::string(what) + ": expected " + std::to_string(cols) + " columns, got " +
                       std::to_string(a.cols()));
  }
}

}  // namespace

VarJepaModel VarJepaModel::init(const ModelDims& dims, std::uint64_t seed) {
  VarJepaModel m = skeleton(dims);
  const Rng root(seed, Stream::init);
  Rng r0 = root.split(0), r1 = root.split(1), r2 = root.split(2), r3 = root.split(3), r4 = root.split(4),
      r5 = root.split(5);
  const ParamStore a = init_mlp(m.ctx, "ctx", r0);
  const ParamStore b = init_mlp(m.aux, "aux", r1);
  const ParamStore c = init_mlp(m.trg, "trg", r2);
  const ParamStore d = init_mlp(m.pred, "pred", r3);
  const ParamStore e = init_mlp(m.dec_x, "dec_x", r4);
  const ParamStore f = init_mlp(m.dec_y, "dec_y", r5);
  const ParamStore s = scalars();
  m.params = ParamStore::concat({&a, &b, &c, &d, &e, &f, &s});
  return m;
}

VarJepaModel VarJepaModel::zeros(const ModelDims& dims) {
  VarJepaModel m = skeleton(dims);
  const ParamStore a = zero_mlp(m.ctx, "ctx");
  const ParamStore b = zero_mlp(m.aux, "aux");
  const ParamStore c = zero_mlp(m.trg, "trg");
  const ParamStore d = zero_mlp(m.pred, "pred");
  const ParamStore e = zero_mlp(m.dec_x, "dec_x");
  const ParamStore f = zero_mlp(m.dec_y, "dec_y");
  const ParamStore s = scalars();
  m.params = ParamStore::concat({&a, &b, &c, &d, &e, &f, &s});
  return m;
}

NoiseBatch NoiseBatch::zeros(Eigen::Index n, const ModelDims& d) {
  return {Matrix::Zero(n, d.d_s), Matrix::Zero(n, d.d_z), Matrix::Zero(n, d.d_s)};
}

NoiseBatch NoiseBatch::draw(Eigen::Index n, const ModelDims& d, Rng& rng) {
  NoiseBatch nb{Matrix(n, d.d_s), Matrix(n, d.d_z), Matrix(n, d.d_s)};
  for (Matrix* m : {&nb.sx, &nb.z, &nb.sy}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = rng.normal();
  }
  return nb;
}

BatchLatents forward_latents(const VarJepaModel& m, const VarMap& vars, ad::Graph& g, const Matrix& x, const Matrix& y,
                             const NoiseBatch& noise) {
  const ModelDims& d = m.dims;
  check_rows(x, d.d_obs, "forward_latents(x)");
  check_rows(y, d.d_obs, "forward_latents(y)");
  if (y.rows() != x.rows()) throw InvalidInput("forward_latents: x/y batch mismatch");
  BatchLatents b;
  ad::Var xv = g.constant(x);
  ad::Var yv = g.constant(y);
  b.q_sx = ad::split_gaussian(mlp_forward(m.ctx, vars, "ctx", xv), d.d_s);
  b.s_x = ad::reparam(b.q_sx, noise.sx);
  b.q_z = ad::split_gaussian(mlp_forward(m.aux, vars, "aux", b.s_x), d.d_z);
  b.z = ad::reparam(b.q_z, noise.z);
  b.q_sy = ad::split_gaussian(mlp_forward(m.trg, vars, "trg", ad::hcat({b.s_x, b.z, yv})), d.d_s);
  b.p_sy = ad::split_gaussian(mlp_forward(m.pred, vars, "pred", ad::hcat({b.s_x, b.z})), d.d_s);
  b.s_y = ad::reparam(b.q_sy, noise.sy);
  return b;
}

ad::Var decode_x(const VarJepaModel& m, const VarMap& vars, ad::Var s_x) { return mlp_forward(m.dec_x, vars, "dec_x", s_x); }

ad::Var decode_y(const VarJepaModel& m, const VarMap& vars, ad::Var s_y) { return mlp_forward(m.dec_y, vars, "dec_y", s_y); }

LatentBundle LatentBatch::bundle(Eigen::Index i, const NoiseBatch& noise) const {
  LatentBundle b;
  b.q_sx = DiagGaussian(q_sx_mean.row(i).transpose(), q_sx_log_var.row(i).transpose());
  b.q_z = DiagGaussian(q_z_mean.row(i).transpose(), q_z_log_var.row(i).transpose());
  b.q_sy = DiagGaussian(q_sy_mean.row(i).transpose(), q_sy_log_var.row(i).transpose());
  b.p_sy = DiagGaussian(p_sy_mean.row(i).transpose(), p_sy_log_var.row(i).transpose());
  b.s_x = s_x.row(i).transpose();
  b.z = z.row(i).transpose();
  b.s_y = s_y.row(i).transpose();
  b.eps_sx = noise.sx.row(i).transpose();
  b.eps_z = noise.z.row(i).transpose();
  b.eps_sy = noise.sy.row(i).transpose();
  return b;
}

LatentBatch infer_batch(const VarJepaModel& m, const Matrix& x, const Matrix& y, const NoiseBatch& noise) {
  ad::Graph g;
  const VarMap vars = bind_params(g, m.params, false);
  const BatchLatents b = forward_latents(m, vars, g, x, y, noise);
  return {b.q_sx.mean.value(), b.q_sx.log_var.value(), b.q_z.mean.value(), b.q_z.log_var.value(),
          b.q_sy.mean.value(), b.q_sy.log_var.value(), b.p_sy.mean.value(), b.p_sy.log_var.value(),
          b.s_x.value(),       b.z.value(),            b.s_y.value()};
}

LatentBundle infer_forward(const VarJepaModel& m, const Vector& x, const Vector& y, const Vector& eps_sx,
                           const Vector& eps_z, const Vector& eps_sy) {
  const NoiseBatch nb{eps_sx.transpose(), eps_z.transpose(), eps_sy.transpose()};
  if (nb.sx.cols() != m.dims.d_s || nb.z.cols() != m.dims.d_z || nb.sy.cols() != m.dims.d_s) {
    throw InvalidInput("infer_forward: noise length mismatch");
  }
  return infer_batch(m, x.transpose(), y.transpose(), nb).bundle(0, nb);
}

Generated generate(const VarJepaModel& m, const Vector& x, const Vector& noise_sx, const Vector& noise_z,
                   const Vector& noise_sy, const Vector& noise_y) {
  const ModelDims& d = m.dims;
  if (x.size() != d.d_obs || noise_sx.size() != d.d_s || noise_z.size() != d.d_z || noise_sy.size() != d.d_s ||
      noise_y.size() != d.d_obs) {
    throw InvalidInput("generate: dimension mismatch");
  }
  ad::Graph g;
  const VarMap vars = bind_params(g, m.params, false);
  const auto q_sx = ad::split_gaussian(mlp_forward(m.ctx, vars, "ctx", g.constant(x.transpose())), d.d_s);
  ad::Var s_x = ad::reparam(q_sx, noise_sx.transpose());
  ad::Var z = g.constant(noise_z.transpose());
  const auto p_sy = ad::split_gaussian(mlp_forward(m.pred, vars, "pred", ad::hcat({s_x, z})), d.d_s);
  ad::Var s_y = ad::reparam(p_sy, noise_sy.transpose());
  const Matrix ymean = decode_y(m, vars, s_y).value();
  const double sd_y = std::exp(0.5 * m.log_var_y());
  Generated out;
  out.s_x = s_x.value().row(0).transpose();
  out.z = noise_z;
  out.s_y = s_y.value().row(0).transpose();
  out.y = ymean.row(0).transpose() + sd_y * noise_y;
  return out;
}

Embedding embed(const VarJepaModel& m, const Vector& x, const Vector& y) {
  const EmbeddingBatch b = embed_batch(m, x.transpose(), y.transpose());
  return {b.sx_mean.row(0).transpose(), b.z_mean.row(0).transpose(), b.sy_mean.row(0).transpose(),
          b.sy_std.row(0).transpose()};
}

EmbeddingBatch embed_batch(const VarJepaModel& m, const Matrix& x, const Matrix& y, Eigen::Index chunk) {
  const Eigen::Index n = x.rows();
  const ModelDims& d = m.dims;
  EmbeddingBatch out{Matrix(n, d.d_s), Matrix(n, d.d_z), Matrix(n, d.d_s), Matrix(n, d.d_s)};
  for (Eigen::Index s = 0; s < n; s += chunk) {
    const Eigen::Index len = std::min(chunk, n - s);
    const NoiseBatch nb = NoiseBatch::zeros(len, d);
    const LatentBatch lb = infer_batch(m, x.middleRows(s, len), y.middleRows(s, len), nb);
    out.sx_mean.middleRows(s, len) = lb.q_sx_mean;
    out.z_mean.middleRows(s, len) = lb.q_z_mean;
    out.sy_mean.middleRows(s, len) = lb.q_sy_mean;
    out.sy_std.middleRows(s, len) = (0.5 * lb.q_sy_log_var.array()).exp().matrix();
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const VarJepaModel& m, const CheckpointMeta& meta) {
  nlohmann::json h;
  h["format"] = "varjepa-checkpoint";
  h["version"] = 1;
  h["dims"] = {{"d_obs", m.dims.d_obs},
               {"d_s", m.dims.d_s},
               {"d_z", m.dims.d_z},
               {"hidden", m.dims.hidden},
               {"depth", m.dims.depth},
               {"activation", to_string(m.dims.activation)}};
  h["specs"] = {{"ctx", to_json(m.ctx)},     {"aux", to_json(m.aux)},     {"trg", to_json(m.trg)},
                {"pred", to_json(m.pred)},   {"dec_x", to_json(m.dec_x)}, {"dec_y", to_json(m.dec_y)}};
  h["seed"] = meta.seed;
  h["variant"] = meta.variant;
  h["epoch"] = meta.epoch;
  write_archive(path, std::move(h), m.params);
}

std::pair<VarJepaModel, CheckpointMeta> load_checkpoint(const std::filesystem::path& path) {
  Archive a = read_archive(path);
  const auto& hd = a.header.at("dims");
  ModelDims d;
  d.d_obs = hd.at("d_obs").get<int>();
  d.d_s = hd.at("d_s").get<int>();
  d.d_z = hd.at("d_z").get<int>();
  d.hidden = hd.at("hidden").get<int>();
  d.depth = hd.at("depth").get<int>();
  d.activation = activation_from_string(hd.at("activation").get<std::string>());
  VarJepaModel m = VarJepaModel::zeros(d);
  m.params.assign(a.params);
  CheckpointMeta meta;
  meta.seed = a.header.at("seed").get<std::uint64_t>();
  meta.variant = a.header.at("variant").get<std::string>();
  meta.epoch = a.header.at("epoch").get<int>();
  return {std::move(m), meta};
}

}  // namespace varjepa
