#include "varjepa/datagen.hpp"
#include "varjepa/dataset_io.hpp"
#include "varjepa/diagnostics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace varjepa;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("varjepa_datagen_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

TEST(SimProcess, ConstantsAndShapes) {
  const SimProcess p = sample_sim_process(0);
  EXPECT_EQ(p.A.rows(), 16);
  EXPECT_EQ(p.A.cols(), 8);
  EXPECT_EQ(p.k.sigma_x, 1.0);
  EXPECT_EQ(p.k.sigma_y, 0.5);
  EXPECT_EQ(p.k.sigma_z, 1.0);
  EXPECT_EQ(p.k.tau_x, 0.3);
  EXPECT_EQ(p.k.tau_y, 0.3);
  EXPECT_EQ(p.delta(), Vector::Constant(16, 2.0));
  EXPECT_EQ(p.h_spec.hidden_dims, std::vector<int>{64});
  EXPECT_EQ(p.h_spec.activation, Activation::tanh);
}

TEST(SimProcess, SeedDeterminism) {
  const SimProcess a = sample_sim_process(3), b = sample_sim_process(3), c = sample_sim_process(4);
  EXPECT_EQ(a.A, b.A);
  EXPECT_TRUE(a.h_x == b.h_x);
  EXPECT_TRUE(a.h_y == b.h_y);
  EXPECT_NE(a.A, c.A);
}

TEST(SimProcess, EntryVarianceOfA) {
  double s = 0.0, s2 = 0.0;
  int n = 0;
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    const SimProcess p = sample_sim_process(seed);
    for (Eigen::Index i = 0; i < p.A.size(); ++i) {
      s += p.A.data()[i];
      s2 += p.A.data()[i] * p.A.data()[i];
      ++n;
    }
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  EXPECT_NEAR(var, 1.0 / 8.0, 0.2 / 8.0);
}

TEST(GenPairs, LabelBalance) {
  const SimProcess p = sample_sim_process(1);
  const Eigen::Index n = 20000;
  const PairDataset d = gen_pairs(p, n, Rng(1, Stream::data));
  double ones = 0.0;
  for (int c : d.c) ones += c;
  EXPECT_LT(std::abs(ones / n - 0.5), 3.0 * std::sqrt(0.25 / n));
}

TEST(GenPairs, NoiselessObservationIsGeneratorOutput) {
  SimConstants k;
  k.tau_x = 0.0;
  const SimProcess p = sample_sim_process(2, k);
  const PairDataset d = gen_pairs(p, 200, Rng(2, Stream::data));
  EXPECT_EQ(d.x, mlp_forward(p.h_spec, p.h_x, "h", d.s_x));
}

TEST(GenPairs, TargetLatentMoments) {
  const SimProcess p = sample_sim_process(3);
  const Eigen::Index n = 100000;
  const PairDataset d = gen_pairs(p, n, Rng(3, Stream::data));
  const Matrix resid = d.s_y - d.s_x - d.z * p.A.transpose();
  const RowVector mean = resid.colwise().mean();
  for (Eigen::Index j = 0; j < resid.cols(); ++j) {
    EXPECT_LT(std::abs(mean(j)), 5.0 * 0.5 / std::sqrt(static_cast<double>(n)));
    const double var = (resid.col(j).array() - mean(j)).square().mean();
    EXPECT_NEAR(var, 0.25, 0.025);
  }
}

TEST(GenPairs, ReplayFromStoredNoise) {
  const SimProcess p = sample_sim_process(4);
  const Rng rng(4, Stream::data);
  const PairDataset d = gen_pairs(p, 50, rng);
  for (Eigen::Index i : {0, 17, 49}) {
    const PairNoise nz = replay_pair_noise(p, rng, i);
    EXPECT_EQ(nz.c, d.c[static_cast<std::size_t>(i)]);
    const Vector sx = nz.c * p.delta() + p.k.sigma_x * nz.eps_sx;
    const Vector z = p.k.sigma_z * nz.eps_z;
    const Vector sy = sx + p.A * z + p.k.sigma_y * nz.eps_sy;
    EXPECT_EQ(Vector(d.s_x.row(i).transpose()), sx);
    EXPECT_EQ(Vector(d.s_y.row(i).transpose()), sy);
    const Matrix hx = mlp_forward(p.h_spec, p.h_x, "h", Matrix(sx.transpose()));
    EXPECT_TRUE(Vector(d.x.row(i).transpose()).isApprox(Vector(hx.row(0).transpose()) + p.k.tau_x * nz.eps_x, 1e-14));
  }
  // subsets regenerate independently
  const PairDataset again = gen_pairs(p, 50, rng);
  EXPECT_EQ(again.x, d.x);
  EXPECT_EQ(again.y, d.y);
}

TEST(SimTabular, AmbiguityAndShapes) {
  const TabularDataset d = gen_sim_tabular(5, 20000);
  EXPECT_EQ(d.numeric.cols(), 28);
  EXPECT_EQ(d.categorical.cols(), 4);
  EXPECT_EQ(d.n_classes, 3);
  double m = 0.0;
  for (Eigen::Index i = 0; i < d.size(); ++i) m += d.u(i) * d.u(i);
  EXPECT_NEAR(m / d.size(), 1.0 / 3.0, 0.01);
  EXPECT_NO_THROW(d.validate());
  EXPECT_NEAR(std::pow(0.5, SimTabularConfig{}.gamma), 0.25, 0.0);
}

TEST(SimTabular, CleanLimitIsLinearlySeparable) {
  SimTabularConfig cfg;
  cfg.zero_ambiguity = true;
  const TabularDataset d = gen_sim_tabular(6, 3000, cfg);
  EXPECT_TRUE((d.u.array() == 0.0).all());
  const ProbeResult r = train_linear_probe(d.numeric, d.label, ProbeConfig{});
  EXPECT_GT(r.eval_acc, 0.95);
}

TEST(SimTabular, ClassMeansAtZeroAmbiguityAreThePrototypes) {
  SimTabularConfig cfg;
  cfg.zero_ambiguity = true;
  const TabularDataset d = gen_sim_tabular(7, 30000, cfg);
  for (int c = 0; c < 3; ++c) {
    RowVector s = RowVector::Zero(28);
    int n = 0;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      if (d.label[static_cast<std::size_t>(i)] == c) {
        s += d.numeric.row(i);
        ++n;
      }
    }
    s /= n;
    // per-coordinate standard error is 1/sqrt(n)
    EXPECT_LT((s - d.prototypes.row(c)).cwiseAbs().maxCoeff(), 5.0 / std::sqrt(static_cast<double>(n)));
  }
  // prototypes sit 4 apart along orthogonal directions
  EXPECT_NEAR(d.prototypes.row(0).norm(), 4.0, 1e-12);
  EXPECT_NEAR(d.prototypes.row(0).dot(d.prototypes.row(1)), 0.0, 1e-12);
}

TEST(CorruptImages, Examples) {
  Rng r(8);
  Matrix img(5, 12);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = r.uniform();
  EXPECT_EQ(corrupt_images(img, Vector::Zero(5), 0.75, Rng(9, Stream::corrupt)), img);
  const Matrix out = corrupt_images(img, Vector::Ones(5), 0.75, Rng(9, Stream::corrupt));
  EXPECT_TRUE((out.array() >= 0.0).all() && (out.array() <= 1.0).all());
  // recover the uniform image from the formula and check it lies in [0,1]
  const Matrix noise = (out - 0.25 * img) / 0.75;
  EXPECT_TRUE((noise.array() >= -1e-12).all() && (noise.array() <= 1.0 + 1e-12).all());
  img(0, 0) = 1.5;
  EXPECT_THROW(corrupt_images(img, Vector::Zero(5), 0.75, Rng(9)), InvalidInput);
}

TEST(Idx, ReadsImagesAndLabels) {
  const fs::path dir = temp_dir("idx");
  {
    std::ofstream out(dir / "img.idx", std::ios::binary);
    write_be32(out, 0x00000803u);
    write_be32(out, 2);
    write_be32(out, 2);
    write_be32(out, 3);
    const unsigned char px[12] = {0, 255, 51, 102, 0, 0, 255, 255, 255, 1, 2, 3};
    out.write(reinterpret_cast<const char*>(px), 12);
    std::ofstream lab(dir / "lab.idx", std::ios::binary);
    write_be32(lab, 0x00000801u);
    write_be32(lab, 2);
    const unsigned char l[2] = {7, 3};
    lab.write(reinterpret_cast<const char*>(l), 2);
  }
  const Matrix m = read_idx_images(dir / "img.idx");
  EXPECT_EQ(m.rows(), 2);
  EXPECT_EQ(m.cols(), 6);
  EXPECT_EQ(m(0, 1), 1.0);
  EXPECT_NEAR(m(0, 2), 0.2, 1e-15);
  EXPECT_EQ(read_idx_labels(dir / "lab.idx"), (std::vector<int>{7, 3}));
  EXPECT_THROW(read_idx_labels(dir / "img.idx"), InvalidInput);
  fs::remove_all(dir);
}

TEST(DatasetIo, PairsRoundTrip) {
  const fs::path dir = temp_dir("pairs");
  const PairDataset d = gen_pairs(sample_sim_process(10), 33, Rng(10, Stream::data));
  save_pairs(dir / "p", d);
  const PairDataset e = load_pairs(dir / "p");
  EXPECT_EQ(e.x, d.x);
  EXPECT_EQ(e.s_y, d.s_y);
  EXPECT_EQ(e.c, d.c);
  EXPECT_EQ(e.process_seed, 10u);
  EXPECT_EQ(e.data_key, d.data_key);
  fs::remove_all(dir);
}

TEST(DatasetIo, TabularRoundTripAndCsv) {
  const fs::path dir = temp_dir("tab");
  const TabularDataset d = gen_sim_tabular(11, 40);
  save_tabular(dir / "t", d);
  const TabularDataset e = load_tabular(dir / "t");
  EXPECT_EQ(e.numeric, d.numeric);
  EXPECT_EQ(e.categorical, d.categorical);
  EXPECT_EQ(e.label, d.label);
  EXPECT_EQ(e.u, d.u);
  EXPECT_EQ(e.cat_cards, d.cat_cards);
  {
    std::ofstream csv(dir / "small.csv");
    csv << "a,b,color,y\n0.5,1.0,2,1\n-1.0,3.5,0,0\n2.0,0.0,1,1\n";
    std::ofstream schema(dir / "small.json");
    schema << R"({"columns": [{"name": "a", "kind": "numeric"}, {"name": "b", "kind": "numeric"},
      {"name": "color", "kind": "categorical", "cardinality": 3}, {"name": "y", "kind": "label"}]})";
  }
  const TabularDataset c = load_tabular_csv(dir / "small.csv", dir / "small.json");
  EXPECT_EQ(c.size(), 3);
  EXPECT_EQ(c.numeric(1, 1), 3.5);
  EXPECT_EQ(c.categorical(0, 0), 2.0);
  EXPECT_EQ(c.label, (std::vector<int>{1, 0, 1}));
  EXPECT_EQ(c.n_classes, 2);
  fs::remove_all(dir);
}
