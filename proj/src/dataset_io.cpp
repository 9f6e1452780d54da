#include "varjepa/dataset_io.hpp"

#include "varjepa/csv.hpp"
#include "varjepa/errors.hpp"

#include <fstream>
#include <optional>

namespace varjepa {

namespace fs = std::filesystem;

void write_f64(const fs::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!out) throw ConfigError("write failed for " + path.string());
}

Matrix read_f64(const fs::path& path, Eigen::Index rows, Eigen::Index cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  Matrix m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!in) throw InvalidInput("truncated data file " + path.string());
  return m;
}

nlohmann::json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw InvalidInput("no manifest.json in " + dir.string());
  return nlohmann::json::parse(in);
}

namespace {

void write_manifest(const fs::path& dir, const nlohmann::json& j) {
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw ConfigError("cannot write manifest in " + dir.string());
  out << j.dump(2) << '\n';
}

Matrix int_column(const std::vector<int>& v) {
  Matrix m(static_cast<Eigen::Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = v[i];
  return m;
}

std::vector<int> to_ints(const Matrix& m) {
  std::vector<int> v(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) v[static_cast<std::size_t>(i)] = static_cast<int>(m.data()[i]);
  return v;
}

nlohmann::json merged(nlohmann::json base, const nlohmann::json& extra) {
  if (extra.is_object()) {
    for (auto it = extra.begin(); it != extra.end(); ++it) base[it.key()] = it.value();
  }
  return base;
}

}  // namespace

void save_pairs(const fs::path& dir, const PairDataset& ds, const nlohmann::json& extra) {
  fs::create_directories(dir);
  const Eigen::Index n = ds.size();
  write_f64(dir / "x.f64", ds.x);
  write_f64(dir / "y.f64", ds.y);
  write_f64(dir / "s_x.f64", ds.s_x);
  write_f64(dir / "s_y.f64", ds.s_y);
  write_f64(dir / "z.f64", ds.z);
  write_f64(dir / "c.f64", int_column(ds.c));
  nlohmann::json j = {{"kind", "pairs"},
                      {"n", n},
                      {"d_obs", ds.x.cols()},
                      {"d_s", ds.s_x.cols()},
                      {"d_z", ds.z.cols()},
                      {"process_seed", ds.process_seed},
                      {"data_key", ds.data_key},
                      {"files", {"x.f64", "y.f64", "s_x.f64", "s_y.f64", "z.f64", "c.f64"}}};
  write_manifest(dir, merged(j, extra));
}

PairDataset load_pairs(const fs::path& dir) {
  const nlohmann::json j = read_manifest(dir);
  if (j.at("kind") != "pairs") throw InvalidInput(dir.string() + " does not hold a pairs dataset");
  const Eigen::Index n = j.at("n").get<Eigen::Index>();
  const Eigen::Index d_obs = j.at("d_obs").get<Eigen::Index>();
  const Eigen::Index d_s = j.at("d_s").get<Eigen::Index>();
  const Eigen::Index d_z = j.at("d_z").get<Eigen::Index>();
  PairDataset ds;
  ds.x = read_f64(dir / "x.f64", n, d_obs);
  ds.y = read_f64(dir / "y.f64", n, d_obs);
  ds.s_x = read_f64(dir / "s_x.f64", n, d_s);
  ds.s_y = read_f64(dir / "s_y.f64", n, d_s);
  ds.z = read_f64(dir / "z.f64", n, d_z);
  ds.c = to_ints(read_f64(dir / "c.f64", n, 1));
  ds.process_seed = j.at("process_seed").get<std::uint64_t>();
  ds.data_key = j.at("data_key").get<std::uint64_t>();
  return ds;
}

void save_tabular(const fs::path& dir, const TabularDataset& ds, const nlohmann::json& extra) {
  ds.validate();
  fs::create_directories(dir);
  write_f64(dir / "numeric.f64", ds.numeric);
  write_f64(dir / "categorical.f64", ds.categorical);
  write_f64(dir / "label.f64", int_column(ds.label));
  write_f64(dir / "u.f64", Matrix(ds.u));
  nlohmann::json schema = nlohmann::json::array();
  for (Eigen::Index j = 0; j < ds.numeric.cols(); ++j) {
    schema.push_back({{"name", "num" + std::to_string(j)}, {"kind", "numeric"}});
  }
  for (std::size_t j = 0; j < ds.cat_cards.size(); ++j) {
    schema.push_back({{"name", "cat" + std::to_string(j)}, {"kind", "categorical"}, {"cardinality", ds.cat_cards[j]}});
  }
  nlohmann::json j = {{"kind", "sim-tabular"},
                      {"n", ds.size()},
                      {"n_numeric", ds.numeric.cols()},
                      {"n_categorical", ds.categorical.cols()},
                      {"cat_cards", ds.cat_cards},
                      {"n_classes", ds.n_classes},
                      {"seed", ds.seed},
                      {"columns", schema},
                      {"files", {"numeric.f64", "categorical.f64", "label.f64", "u.f64"}}};
  write_manifest(dir, merged(j, extra));
}

TabularDataset load_tabular(const fs::path& dir) {
  const nlohmann::json j = read_manifest(dir);
  if (j.at("kind") != "sim-tabular") throw InvalidInput(dir.string() + " does not hold a tabular dataset");
  const Eigen::Index n = j.at("n").get<Eigen::Index>();
  TabularDataset ds;
  ds.numeric = read_f64(dir / "numeric.f64", n, j.at("n_numeric").get<Eigen::Index>());
  ds.categorical = read_f64(dir / "categorical.f64", n, j.at("n_categorical").get<Eigen::Index>());
  ds.label = to_ints(read_f64(dir / "label.f64", n, 1));
  ds.u = read_f64(dir / "u.f64", n, 1).col(0);
  ds.cat_cards = j.at("cat_cards").get<std::vector<int>>();
  ds.n_classes = j.at("n_classes").get<int>();
  ds.seed = j.at("seed").get<std::uint64_t>();
  ds.validate();
  return ds;
}

TabularDataset load_tabular_csv(const fs::path& csv, const fs::path& schema_path) {
  std::ifstream sin(schema_path);
  if (!sin) throw InvalidInput("cannot open schema " + schema_path.string());
  const nlohmann::json schema = nlohmann::json::parse(sin);
  const CsvTable t = read_csv(csv);
  std::vector<std::size_t> num_cols, cat_cols;
  std::vector<int> cards;
  std::optional<std::size_t> label_col, u_col;
  for (const auto& c : schema.at("columns")) {
    const std::size_t idx = t.column(c.at("name").get<std::string>());
    const std::string kind = c.at("kind").get<std::string>();
    if (kind == "numeric") {
      num_cols.push_back(idx);
    } else if (kind == "categorical") {
      cat_cols.push_back(idx);
      cards.push_back(c.at("cardinality").get<int>());
    } else if (kind == "label") {
      label_col = idx;
    } else if (kind == "u") {
      u_col = idx;
    } else {
      throw InvalidInput("schema: unknown column kind '" + kind + "'");
    }
  }
  if (!label_col) throw InvalidInput("schema: a label column is required");
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  TabularDataset ds;
  ds.numeric.resize(n, static_cast<Eigen::Index>(num_cols.size()));
  ds.categorical.resize(n, static_cast<Eigen::Index>(cat_cols.size()));
  ds.cat_cards = cards;
  ds.label.resize(static_cast<std::size_t>(n));
  ds.u = Vector::Zero(n);
  int max_label = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = t.rows[static_cast<std::size_t>(i)];
    for (std::size_t k = 0; k < num_cols.size(); ++k) ds.numeric(i, static_cast<Eigen::Index>(k)) = parse_double(row[num_cols[k]]);
    for (std::size_t k = 0; k < cat_cols.size(); ++k) ds.categorical(i, static_cast<Eigen::Index>(k)) = parse_double(row[cat_cols[k]]);
    const int l = static_cast<int>(parse_double(row[*label_col]));
    ds.label[static_cast<std::size_t>(i)] = l;
    max_label = std::max(max_label, l);
    if (u_col) ds.u(i) = parse_double(row[*u_col]);
  }
  ds.n_classes = max_label + 1;
  ds.validate();
  return ds;
}

}  // namespace varjepa
