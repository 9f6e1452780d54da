#include "varjepa/gradcheck.hpp"
#include "varjepa/model.hpp"
#include "varjepa/objective.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

using namespace varjepa;

namespace {

ModelDims tiny_dims(Activation act = Activation::gelu) {
  ModelDims d;
  d.d_obs = 4;
  d.d_s = 2;
  d.d_z = 2;
  d.hidden = 8;
  d.depth = 2;
  d.activation = act;
  return d;
}

Vector randn(Eigen::Index n, Rng& r) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = r.normal();
  return v;
}

Matrix randn(Eigen::Index n, Eigen::Index d, Rng& r) {
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.normal();
  return m;
}

}  // namespace

TEST(Model, WiringDims) {
  const VarJepaModel m = VarJepaModel::init(ModelDims{}, 0);
  EXPECT_EQ(m.ctx.input_dim, 32);
  EXPECT_EQ(m.ctx.output_dim, 32);
  EXPECT_EQ(m.aux.input_dim, 16);
  EXPECT_EQ(m.aux.output_dim, 16);
  EXPECT_EQ(m.trg.input_dim, 16 + 8 + 32);
  EXPECT_EQ(m.trg.output_dim, 32);
  EXPECT_EQ(m.pred.input_dim, 24);
  EXPECT_EQ(m.pred.output_dim, 32);
  EXPECT_EQ(m.dec_x.output_dim, 32);
  EXPECT_EQ(m.dec_y.output_dim, 32);
  EXPECT_EQ(m.ctx.hidden_dims, (std::vector<int>{128, 128}));
  EXPECT_EQ(m.log_var_x(), 0.0);
  EXPECT_EQ(m.log_var_y(), 0.0);
}

TEST(InferForward, ZeroModelZeroNoise) {
  const ModelDims d = tiny_dims();
  const VarJepaModel m = VarJepaModel::zeros(d);
  Rng r(1);
  const LatentBundle b = infer_forward(m, randn(4, r), randn(4, r), Vector::Zero(2), Vector::Zero(2), Vector::Zero(2));
  for (const DiagGaussian* g : {&b.q_sx, &b.q_z, &b.q_sy, &b.p_sy}) {
    EXPECT_TRUE(g->mean().isZero(0.0));
    EXPECT_TRUE(g->log_var().isZero(0.0));
  }
  EXPECT_TRUE(b.s_x.isZero(0.0));
  EXPECT_TRUE(b.z.isZero(0.0));
  EXPECT_TRUE(b.s_y.isZero(0.0));
}

TEST(InferForward, Deterministic) {
  const VarJepaModel m = VarJepaModel::init(tiny_dims(), 3);
  Rng r(2);
  const Vector x = randn(4, r), y = randn(4, r), e1 = randn(2, r), e2 = randn(2, r), e3 = randn(2, r);
  const LatentBundle a = infer_forward(m, x, y, e1, e2, e3);
  const LatentBundle b = infer_forward(m, x, y, e1, e2, e3);
  EXPECT_EQ(a.s_x, b.s_x);
  EXPECT_EQ(a.z, b.z);
  EXPECT_EQ(a.s_y, b.s_y);
  EXPECT_EQ(a.q_sy.log_var(), b.q_sy.log_var());
}

TEST(InferForward, SamplesReproduceFromRecordedParts) {
  const VarJepaModel m = VarJepaModel::init(tiny_dims(Activation::tanh), 4);
  Rng r(3);
  for (int k = 0; k < 10; ++k) {
    const LatentBundle b = infer_forward(m, randn(4, r), randn(4, r), randn(2, r), randn(2, r), randn(2, r));
    EXPECT_TRUE(b.s_x.isApprox(reparam_sample(b.q_sx, b.eps_sx), 1e-14));
    EXPECT_TRUE(b.z.isApprox(reparam_sample(b.q_z, b.eps_z), 1e-14));
    EXPECT_TRUE(b.s_y.isApprox(reparam_sample(b.q_sy, b.eps_sy), 1e-14));
    // q(z|.) and the predictor are driven by the sampled s_x
    const Matrix aux_in = b.s_x.transpose();
    const Matrix head = mlp_forward(m.aux, m.params, "aux", aux_in);
    EXPECT_TRUE(head.row(0).head(2).transpose().isApprox(b.q_z.mean(), 1e-14));
  }
}

TEST(InferForward, TaintTargetDoesNotReachAuxOrPredictor) {
  const VarJepaModel m = VarJepaModel::init(tiny_dims(), 5);
  Rng r(4);
  const Vector x = randn(4, r), e1 = randn(2, r), e2 = randn(2, r), e3 = randn(2, r);
  const LatentBundle a = infer_forward(m, x, randn(4, r), e1, e2, e3);
  const LatentBundle b = infer_forward(m, x, randn(4, r), e1, e2, e3);
  EXPECT_EQ(a.s_x, b.s_x);
  EXPECT_EQ(a.q_z.mean(), b.q_z.mean());
  EXPECT_EQ(a.q_z.log_var(), b.q_z.log_var());
  EXPECT_EQ(a.p_sy.mean(), b.p_sy.mean());
  EXPECT_EQ(a.p_sy.log_var(), b.p_sy.log_var());
  EXPECT_NE(a.q_sy.mean(), b.q_sy.mean());
}

TEST(InferForward, DimMismatchRejected) {
  const VarJepaModel m = VarJepaModel::init(tiny_dims(), 6);
  EXPECT_THROW(infer_forward(m, Vector::Zero(3), Vector::Zero(4), Vector::Zero(2), Vector::Zero(2), Vector::Zero(2)),
               InvalidInput);
  EXPECT_THROW(infer_forward(m, Vector::Zero(4), Vector::Zero(4), Vector::Zero(3), Vector::Zero(2), Vector::Zero(2)),
               InvalidInput);
}

TEST(Generate, ZeroNoiseIsChainOfMeans) {
  const VarJepaModel m = VarJepaModel::init(tiny_dims(), 7);
  Rng r(5);
  const Vector x = randn(4, r);
  const Generated g = generate(m, x, Vector::Zero(2), Vector::Zero(2), Vector::Zero(2), Vector::Zero(4));
  const Matrix head_x = mlp_forward(m.ctx, m.params, "ctx", Matrix(x.transpose()));
  EXPECT_TRUE(g.s_x.isApprox(head_x.row(0).head(2).transpose(), 1e-14));
  EXPECT_TRUE(g.z.isZero(0.0));
  Matrix pin(1, 4);
  pin << g.s_x.transpose(), g.z.transpose();
  const Matrix head_p = mlp_forward(m.pred, m.params, "pred", pin);
  EXPECT_TRUE(g.s_y.isApprox(head_p.row(0).head(2).transpose(), 1e-14));
  const Matrix y = mlp_forward(m.dec_y, m.params, "dec_y", Matrix(g.s_y.transpose()));
  EXPECT_TRUE(g.y.isApprox(y.row(0).transpose(), 1e-14));
}

TEST(Generate, ZeroModelGivesDecoderBias) {
  VarJepaModel m = VarJepaModel::zeros(tiny_dims());
  const std::string last = "dec_y.b" + std::to_string(m.dec_y.n_layers() - 1);
  Tensor& b = m.params.at(last);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = 0.25 * static_cast<double>(i) - 0.3;
  Rng r(6);
  const Generated g = generate(m, randn(4, r), Vector::Zero(2), Vector::Zero(2), Vector::Zero(2), Vector::Zero(4));
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_EQ(g.y(i), b[static_cast<std::size_t>(i)]);
}

TEST(Generate, VarianceAtLeastObservationNoise) {
  VarJepaModel m = VarJepaModel::init(tiny_dims(), 8);
  m.params.at("log_var_y")[0] = std::log(0.2);
  Rng r(7);
  const Vector x = randn(4, r);
  const int n = 10000;
  Matrix ys(n, 4);
  for (int i = 0; i < n; ++i) ys.row(i) = generate(m, x, randn(2, r), randn(2, r), randn(2, r), randn(4, r)).y.transpose();
  ASSERT_TRUE(ys.allFinite());
  const RowVector mean = ys.colwise().mean();
  for (Eigen::Index j = 0; j < 4; ++j) {
    const double var = (ys.col(j).array() - mean(j)).square().sum() / (n - 1);
    // sampling slack of ~5 standard errors of a variance estimate
    EXPECT_GE(var, 0.2 * (1.0 - 5.0 * std::sqrt(2.0 / n)));
  }
}

TEST(Embed, EqualsZeroNoiseInference) {
  const VarJepaModel m = VarJepaModel::init(tiny_dims(), 9);
  Rng r(8);
  const Vector x = randn(4, r), y = randn(4, r);
  const Embedding e = embed(m, x, y);
  const LatentBundle b = infer_forward(m, x, y, Vector::Zero(2), Vector::Zero(2), Vector::Zero(2));
  EXPECT_TRUE(e.sx_mean.isApprox(b.q_sx.mean(), 1e-14));
  EXPECT_TRUE(e.z_mean.isApprox(b.q_z.mean(), 1e-14));
  EXPECT_TRUE(e.sy_mean.isApprox(b.q_sy.mean(), 1e-14));
  EXPECT_TRUE(e.sy_std.isApprox(Vector((0.5 * b.q_sy.log_var().array()).exp()), 1e-14));
}

TEST(Embed, ZeroModel) {
  const VarJepaModel m = VarJepaModel::zeros(tiny_dims());
  Rng r(9);
  const EmbeddingBatch e = embed_batch(m, randn(5, 4, r), randn(5, 4, r), 2);
  EXPECT_TRUE(e.sx_mean.isZero(0.0));
  EXPECT_TRUE(e.sy_mean.isZero(0.0));
  EXPECT_TRUE((e.sy_std.array() == 1.0).all());
}

TEST(Embed, ChunkingDoesNotChangeResults) {
  const VarJepaModel m = VarJepaModel::init(tiny_dims(), 10);
  Rng r(10);
  const Matrix x = randn(9, 4, r), y = randn(9, 4, r);
  const EmbeddingBatch a = embed_batch(m, x, y, 2);
  const EmbeddingBatch b = embed_batch(m, x, y, 100);
  // product kernels differ by row count, so only the last bits may move
  EXPECT_TRUE(a.sx_mean.isApprox(b.sx_mean, 1e-13));
  EXPECT_TRUE(a.sy_std.isApprox(b.sy_std, 1e-13));
  const EmbeddingBatch c = embed_batch(m, x, y, 2);
  EXPECT_EQ(a.sx_mean, c.sx_mean);
  EXPECT_EQ(a.sy_std, c.sy_std);
}

TEST(Model, FullLossGradientMatchesFiniteDifferences) {
  for (Activation act : {Activation::gelu, Activation::tanh}) {
    const VarJepaModel m = VarJepaModel::init(tiny_dims(act), 11);
    Rng r(11);
    const Matrix x = randn(4, 4, r), y = randn(4, 4, r);
    const NoiseBatch noise = NoiseBatch::draw(4, m.dims, r);
    const LossWeights w;
    const LossFn f = [&](ad::Graph& g, const VarMap& vars) {
      return build_loss(m, vars, g, x, y, noise, w).total;
    };
    EXPECT_LT(finite_diff_check(f, m.params, 1e-5), 1e-4) << to_string(act);
  }
}

TEST(Checkpoint, RoundTrip) {
  const VarJepaModel m = VarJepaModel::init(tiny_dims(Activation::tanh), 12);
  const auto path = std::filesystem::temp_directory_path() / "varjepa_model_ckpt_test.bin";
  save_checkpoint(path, m, CheckpointMeta{12, "D", 7});
  const auto [m2, meta] = load_checkpoint(path);
  EXPECT_EQ(meta.seed, 12u);
  EXPECT_EQ(meta.variant, "D");
  EXPECT_EQ(meta.epoch, 7);
  EXPECT_EQ(m2.dims.activation, Activation::tanh);
  ASSERT_EQ(m2.params.size(), m.params.size());
  for (std::size_t i = 0; i < m.params.size(); ++i) EXPECT_EQ(m2.params[i], m.params[i]);
  std::filesystem::remove(path);
}

TEST(Model, InitDeterministicAndSeedDependent) {
  const VarJepaModel a = VarJepaModel::init(tiny_dims(), 13);
  const VarJepaModel b = VarJepaModel::init(tiny_dims(), 13);
  const VarJepaModel c = VarJepaModel::init(tiny_dims(), 14);
  EXPECT_EQ(a.params[0], b.params[0]);
  EXPECT_NE(a.params[0], c.params[0]);
}
