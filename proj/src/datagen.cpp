#include "varjepa/datagen.hpp"

#include "varjepa/errors.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace varjepa {

SimProcess sample_sim_process(std::uint64_t seed, const SimConstants& k) {
  SimProcess p;
  p.k = k;
  p.seed = seed;
  const Rng root(seed, Stream::process);
  Rng ra = root.split(0);
  p.A.resize(k.d_s, k.d_z);
  const double sd = 1.0 / std::sqrt(static_cast<double>(k.d_z));
  for (Eigen::Index i = 0; i < p.A.size(); ++i) p.A.data()[i] = sd * ra.normal();
  p.h_spec = MlpSpec{k.d_s, {k.gen_hidden}, k.d_obs, Activation::tanh, Activation::none};
  Rng rx = root.split(1);
  Rng ry = root.split(2);
  p.h_x = init_mlp(p.h_spec, "h", rx, InitScheme::xavier_uniform);
  p.h_y = init_mlp(p.h_spec, "h", ry, InitScheme::xavier_uniform);
  return p;
}

namespace {

void fill_normal(Vector& v, Rng& r) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = r.normal();
}

}  // namespace

PairNoise replay_pair_noise(const SimProcess& p, const Rng& rng, Eigen::Index i) {
  Rng r = rng.split(static_cast<std::uint64_t>(i));
  PairNoise nz;
  nz.c = r.uniform() < 0.5 ? 1 : 0;
  nz.eps_sx.resize(p.k.d_s);
  nz.eps_z.resize(p.k.d_z);
  nz.eps_sy.resize(p.k.d_s);
  nz.eps_x.resize(p.k.d_obs);
  nz.eps_y.resize(p.k.d_obs);
  fill_normal(nz.eps_sx, r);
  fill_normal(nz.eps_z, r);
  fill_normal(nz.eps_sy, r);
  fill_normal(nz.eps_x, r);
  fill_normal(nz.eps_y, r);
  return nz;
}

PairDataset gen_pairs(const SimProcess& p, Eigen::Index n, const Rng& rng) {
  if (n < 1) throw InvalidInput("gen_pairs: n must be >= 1");
  const SimConstants& k = p.k;
  PairDataset ds;
  ds.process_seed = p.seed;
  ds.data_key = rng.key();
  ds.s_x.resize(n, k.d_s);
  ds.z.resize(n, k.d_z);
  ds.s_y.resize(n, k.d_s);
  ds.c.resize(static_cast<std::size_t>(n));
  Matrix ex(n, k.d_obs), ey(n, k.d_obs);
  const Vector delta = p.delta();
  for (Eigen::Index i = 0; i < n; ++i) {
    const PairNoise nz = replay_pair_noise(p, rng, i);
    ds.c[static_cast<std::size_t>(i)] = nz.c;
    const Vector sx = static_cast<double>(nz.c) * delta + k.sigma_x * nz.eps_sx;
    const Vector z = k.sigma_z * nz.eps_z;
    const Vector sy = sx + p.A * z + k.sigma_y * nz.eps_sy;
    ds.s_x.row(i) = sx.transpose();
    ds.z.row(i) = z.transpose();
    ds.s_y.row(i) = sy.transpose();
    ex.row(i) = k.tau_x * nz.eps_x.transpose();
    ey.row(i) = k.tau_y * nz.eps_y.transpose();
  }
  ds.x = mlp_forward(p.h_spec, p.h_x, "h", ds.s_x) + ex;
  ds.y = mlp_forward(p.h_spec, p.h_y, "h", ds.s_y) + ey;
  return ds;
}

void TabularDataset::validate() const {
  const Eigen::Index n = numeric.rows();
  if (categorical.rows() != n || static_cast<Eigen::Index>(label.size()) != n || u.size() != n) {
    throw InvalidInput("TabularDataset: column lengths differ");
  }
  if (static_cast<Eigen::Index>(cat_cards.size()) != categorical.cols()) {
    throw InvalidInput("TabularDataset: cardinality list does not match categorical columns");
  }
  for (Eigen::Index j = 0; j < categorical.cols(); ++j) {
    const int card = cat_cards[static_cast<std::size_t>(j)];
    if (card < 2) throw InvalidInput("TabularDataset: cardinality must be >= 2");
    for (Eigen::Index i = 0; i < n; ++i) {
      const double v = categorical(i, j);
      if (v < 0 || v >= card || v != std::floor(v)) throw InvalidInput("TabularDataset: categorical value out of range");
    }
  }
  for (int l : label) {
    if (l < 0 || l >= n_classes) throw InvalidInput("TabularDataset: label out of range");
  }
  if ((u.array() < 0.0).any() || (u.array() > 1.0).any()) throw InvalidInput("TabularDataset: u outside [0,1]");
}

TabularDataset gen_sim_tabular(std::uint64_t seed, Eigen::Index n, const SimTabularConfig& cfg) {
  if (n < 1) throw InvalidInput("gen_sim_tabular: n must be >= 1");
  if (cfg.n_classes < 2 || cfg.n_classes > cfg.n_numeric) throw InvalidInput("gen_sim_tabular: need 2 <= classes <= numeric");
  const int F = cfg.n_numeric;
  const int C = cfg.n_classes;
  const Rng root(seed, Stream::data);

  // dataset-level structure
  Rng rs = root.split(0);
  Matrix G(F, F);
  for (Eigen::Index i = 0; i < G.size(); ++i) G.data()[i] = rs.normal();
  const Eigen::HouseholderQR<Matrix> qr(G);
  const Matrix Q = qr.householderQ() * Matrix::Identity(F, C);
  Matrix protos = cfg.prototype_norm * Q.transpose();  // [C x F]

  std::vector<int> order(static_cast<std::size_t>(F));
  std::iota(order.begin(), order.end(), 0);
  for (int i = F - 1; i > 0; --i) std::swap(order[static_cast<std::size_t>(i)], order[rs.below(static_cast<std::uint64_t>(i) + 1)]);
  Vector subset = Vector::Zero(F);
  const int n_sub = static_cast<int>(std::floor(cfg.subset_fraction * F));
  for (int i = 0; i < n_sub; ++i) subset(order[static_cast<std::size_t>(i)]) = 1.0;

  Matrix cat_dirs(cfg.n_categorical, F);
  for (Eigen::Index i = 0; i < cat_dirs.size(); ++i) cat_dirs.data()[i] = rs.normal();
  for (Eigen::Index j = 0; j < cat_dirs.rows(); ++j) cat_dirs.row(j).normalize();

  TabularDataset ds;
  ds.seed = seed;
  ds.n_classes = C;
  ds.prototypes = protos;
  ds.numeric.resize(n, F);
  ds.categorical.resize(n, cfg.n_categorical);
  ds.cat_cards.assign(static_cast<std::size_t>(cfg.n_categorical), cfg.cat_bins);
  ds.label.resize(static_cast<std::size_t>(n));
  ds.u.resize(n);

  Matrix scores(n, cfg.n_categorical);
  std::vector<double> flip_u(static_cast<std::size_t>(n * cfg.n_categorical));
  std::vector<double> flip_pick(flip_u.size());
  const double sd = std::sqrt(cfg.variance);
  for (Eigen::Index i = 0; i < n; ++i) {
    Rng r = root.split(static_cast<std::uint64_t>(i) + 1);
    const int c = static_cast<int>(r.below(static_cast<std::uint64_t>(C)));
    const int alt = (c + 1 + static_cast<int>(r.below(static_cast<std::uint64_t>(C - 1)))) % C;
    const double u = cfg.zero_ambiguity ? 0.0 : r.uniform();
    const double ua = std::pow(u, cfg.gamma);
    ds.label[static_cast<std::size_t>(i)] = c;
    ds.u(i) = u;
    const RowVector diff = protos.row(alt) - protos.row(c);
    const RowVector pull = (cfg.blend * ua) * diff + (cfg.subset_blend * ua) * diff.cwiseProduct(subset.transpose());
    const RowVector center = protos.row(c) + pull;
    const double noise_sd = sd + cfg.noise_boost * ua;
    for (int f = 0; f < F; ++f) ds.numeric(i, f) = center(f) + noise_sd * r.normal();
    // categorical scores come from the clean center so that they carry class signal
    for (int j = 0; j < cfg.n_categorical; ++j) {
      scores(i, j) = cat_dirs.row(j).dot(center) + sd * r.normal();
      const std::size_t idx = static_cast<std::size_t>(i * cfg.n_categorical + j);
      flip_u[idx] = r.uniform() < cfg.flip_max * ua ? 1.0 : 0.0;
      flip_pick[idx] = static_cast<double>(r.below(static_cast<std::uint64_t>(cfg.cat_bins - 1)));
    }
  }
  // quantile bins per categorical column
  for (int j = 0; j < cfg.n_categorical; ++j) {
    std::vector<double> col(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = scores(i, j);
    std::vector<double> sorted = col;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> cuts;
    for (int b = 1; b < cfg.cat_bins; ++b) {
      const auto q = static_cast<std::size_t>(std::min<Eigen::Index>(n - 1, (n * b) / cfg.cat_bins));
      cuts.push_back(sorted[q]);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      int bin = static_cast<int>(std::upper_bound(cuts.begin(), cuts.end(), col[static_cast<std::size_t>(i)]) - cuts.begin());
      bin = std::min(bin, cfg.cat_bins - 1);
      const std::size_t idx = static_cast<std::size_t>(i * cfg.n_categorical + j);
      if (flip_u[idx] > 0.5) {
        const int other = static_cast<int>(flip_pick[idx]);
        bin = other >= bin ? other + 1 : other;
      }
      ds.categorical(i, j) = bin;
    }
  }
  ds.validate();
  return ds;
}

Matrix corrupt_images(const Matrix& images, const Vector& u, double lambda, const Rng& rng) {
  if (u.size() != images.rows()) throw InvalidInput("corrupt_images: u length must equal image count");
  if ((images.array() < 0.0).any() || (images.array() > 1.0).any()) {
    throw InvalidInput("corrupt_images: pixel values must lie in [0,1]");
  }
  Matrix out(images.rows(), images.cols());
  for (Eigen::Index i = 0; i < images.rows(); ++i) {
    const double alpha = std::clamp(lambda * u(i), 0.0, 1.0);
    Rng r = rng.split(static_cast<std::uint64_t>(i));
    for (Eigen::Index k = 0; k < images.cols(); ++k) {
      const double noise = r.uniform();
      out(i, k) = alpha == 0.0 ? images(i, k) : (1.0 - alpha) * images(i, k) + alpha * noise;
    }
  }
  return out;
}

namespace {

std::uint32_t read_be32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw InvalidInput("IDX: truncated header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

}  // namespace

Matrix read_idx_images(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("IDX: cannot open " + path.string());
  if (read_be32(in) != 0x00000803u) throw InvalidInput("IDX: bad image magic in " + path.string());
  const std::uint32_t n = read_be32(in), rows = read_be32(in), cols = read_be32(in);
  const std::size_t d = static_cast<std::size_t>(rows) * cols;
  std::vector<unsigned char> buf(static_cast<std::size_t>(n) * d);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw InvalidInput("IDX: truncated image data");
  Matrix out(n, static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < buf.size(); ++i) out.data()[i] = buf[i] / 255.0;
  return out;
}

std::vector<int> read_idx_labels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("IDX: cannot open " + path.string());
  if (read_be32(in) != 0x00000801u) throw InvalidInput("IDX: bad label magic in " + path.string());
  const std::uint32_t n = read_be32(in);
  std::vector<unsigned char> buf(n);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
  if (!in) throw InvalidInput("IDX: truncated label data");
  return {buf.begin(), buf.end()};
}

}  // namespace varjepa
