#include "common.hpp"

#include "varjepa/csv.hpp"
#include "varjepa/dataset_io.hpp"
#include "varjepa/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;

namespace varjepa {

PairDataset default_eval_pairs(const PairDataset& train, Eigen::Index n_eval) {
  const SimProcess p = sample_sim_process(train.process_seed);
  return gen_pairs(p, n_eval, Rng(train.process_seed, Stream::data).split(1));
}

RowSplit tabular_test_split(Eigen::Index n, double test_fraction, std::uint64_t seed) {
  if (n < 2) throw InvalidInput("tabular_test_split: need at least 2 rows");
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  Rng r = Rng(seed, Stream::probe).split(1);
  for (Eigen::Index i = n - 1; i > 0; --i) {
    std::swap(perm[static_cast<std::size_t>(i)], perm[r.below(static_cast<std::uint64_t>(i) + 1)]);
  }
  const auto n_test = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::llround(test_fraction * n)), 1, n - 1);
  RowSplit s;
  s.test.assign(perm.begin(), perm.begin() + n_test);
  s.train.assign(perm.begin() + n_test, perm.end());
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

TabularDataset take_rows(const TabularDataset& ds, const std::vector<Eigen::Index>& rows) {
  TabularDataset out;
  const auto n = static_cast<Eigen::Index>(rows.size());
  out.numeric.resize(n, ds.numeric.cols());
  out.categorical.resize(n, ds.categorical.cols());
  out.u.resize(n);
  out.label.resize(rows.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index r = rows[static_cast<std::size_t>(i)];
    out.numeric.row(i) = ds.numeric.row(r);
    out.categorical.row(i) = ds.categorical.row(r);
    out.u(i) = ds.u(r);
    out.label[static_cast<std::size_t>(i)] = ds.label[static_cast<std::size_t>(r)];
  }
  out.cat_cards = ds.cat_cards;
  out.n_classes = ds.n_classes;
  out.prototypes = ds.prototypes;
  out.seed = ds.seed;
  return out;
}

TrainResult run_simulation(const SimulationRunConfig& cfg, const PairDataset& train, const PairDataset& eval,
                           const fs::path& dir, const nlohmann::json& manifest_extra) {
  nlohmann::json manifest = manifest_extra.is_object() ? manifest_extra : nlohmann::json::object();
  if (!manifest.contains("started")) manifest["started"] = cli::utc_timestamp();
  const nlohmann::json cj = to_json(cfg);
  cli::write_json_file(dir / "config.json", cj);

  DiagnosticsHook hook;
  if (cfg.n_eval > 0 && eval.size() > 0) {
    hook = standard_diagnostics_hook(eval, cfg.variant, cfg.variant.seed, cfg.diag_embedding);
  }
  TrainResult r = train_run(cfg.variant, train, hook);

  cli::write_losses(dir / "losses.csv", r.losses);
  cli::write_diagnostics(dir / "diagnostics.csv", r.records);
  save_checkpoint(dir / "checkpoint.bin", r.model, CheckpointMeta{cfg.variant.seed, cfg.variant.id, cfg.variant.epochs});

  manifest["config_hash"] = config_hash(cj);
  manifest["seeds"] = {{"train", cfg.variant.seed},
                       {"process", train.process_seed},
                       {"data_key", train.data_key},
                       {"eval_data_key", eval.data_key},
                       {"diagnostics", cfg.variant.seed}};
  manifest["kind"] = "simulation";
  cli::finish_manifest(dir, std::move(manifest));
  return r;
}

namespace cli {

std::string utc_timestamp(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void prepare_output_dir(const fs::path& dir, bool overwrite) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError("output path " + dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!overwrite) throw ConfigError("output " + dir.string() + " already exists (pass --overwrite)");
      fs::remove_all(dir);
    }
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create " + dir.string() + ": " + ec.message());
}

void prepare_output_file(const fs::path& file, bool overwrite) {
  if (fs::exists(file) && !overwrite) throw ConfigError("output " + file.string() + " already exists (pass --overwrite)");
  if (file.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(file.parent_path(), ec);
    if (ec) throw ConfigError("cannot create " + file.parent_path().string() + ": " + ec.message());
  }
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<std::string> list_artifacts(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), dir).generic_string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void finish_manifest(const fs::path& dir, nlohmann::json manifest) {
  manifest["finished"] = utc_timestamp();
  std::vector<std::string> files = list_artifacts(dir);
  if (std::find(files.begin(), files.end(), "manifest.json") == files.end()) files.push_back("manifest.json");
  std::sort(files.begin(), files.end());
  manifest["artifacts"] = files;
  write_json_file(dir / "manifest.json", manifest);
}

nlohmann::json base_manifest(const Invocation& inv, const std::string& command) {
  return {{"command", command}, {"command_line", inv.argv}, {"version", kVersion}, {"started", utc_timestamp()}};
}

void write_losses(const fs::path& path, const std::vector<LossRow>& rows) {
  CsvWriter w(path, loss_csv_header());
  for (const LossRow& r : rows) {
    const LossBreakdown& l = r.loss;
    w.cell(r.epoch).cell(static_cast<long long>(r.step));
    for (double v : {l.rec, l.gen, l.kl_sx, l.kl_z, l.kl_sy, l.sigreg_sx, l.sigreg_sy, l.total}) w.cell(v);
    w.end_row();
  }
}

void write_diagnostics(const fs::path& path, const std::vector<DiagnosticsRecord>& records) {
  CsvWriter w(path, DiagnosticsRecord::csv_header());
  for (const DiagnosticsRecord& r : records) {
    w.cell(r.epoch);
    const std::vector<double> v = r.csv_values();
    for (std::size_t i = 1; i < v.size(); ++i) w.cell(v[i]);
    w.end_row();
  }
}

namespace {

std::string abs_string(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

Vector read_u_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::vector<double> v;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      v.push_back(parse_double(line));
    } catch (const InvalidInput&) {
      if (v.empty()) continue;  // header line
      throw InvalidInput(path.string() + ": bad value '" + line + "'");
    }
  }
  Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
  return out;
}

std::string balance_string(const std::vector<int>& labels, int n_classes) {
  std::vector<Eigen::Index> counts(static_cast<std::size_t>(n_classes), 0);
  for (int l : labels) ++counts[static_cast<std::size_t>(l)];
  std::string s;
  for (int c = 0; c < n_classes; ++c) {
    if (c) s += " ";
    s += std::to_string(c) + ":" + std::to_string(counts[static_cast<std::size_t>(c)]);
  }
  return s;
}

}  // namespace

int cmd_gen(const Invocation& inv, const std::string& kind, std::uint64_t seed, Eigen::Index n, const fs::path& out,
            int split, bool zero_ambiguity, const fs::path& images, const fs::path& u_file, double lambda) {
  nlohmann::json manifest = base_manifest(inv, "gen");
  if (kind == "pairs") {
    if (n < 1) throw ConfigError("gen pairs: --n must be >= 1");
    if (split < 0) throw ConfigError("gen pairs: --split must be >= 0");
    prepare_output_dir(out, inv.overwrite);
    const SimProcess p = sample_sim_process(seed);
    const PairDataset ds = gen_pairs(p, n, Rng(seed, Stream::data).split(static_cast<std::uint64_t>(split)));
    manifest["generator"] = {{"kind", "pairs"}, {"seed", seed}, {"split", split}, {"n", n}};
    save_pairs(out, ds, manifest);
    std::cout << "pairs: n=" << ds.size() << " d_obs=" << ds.x.cols() << " d_s=" << ds.s_x.cols()
              << " d_z=" << ds.z.cols() << " labels " << balance_string(ds.c, 2) << "\n";
  } else if (kind == "sim-tabular") {
    if (n < 1) throw ConfigError("gen sim-tabular: --n must be >= 1");
    prepare_output_dir(out, inv.overwrite);
    SimTabularConfig tc;
    tc.zero_ambiguity = zero_ambiguity;
    const TabularDataset ds = gen_sim_tabular(seed, n, tc);
    manifest["generator"] = {{"kind", "sim-tabular"}, {"seed", seed}, {"n", n}, {"zero_ambiguity", zero_ambiguity}};
    save_tabular(out, ds, manifest);
    std::cout << "sim-tabular: n=" << ds.size() << " numeric=" << ds.numeric.cols()
              << " categorical=" << ds.categorical.cols() << " labels " << balance_string(ds.label, ds.n_classes)
              << "\n";
  } else if (kind == "corrupt-images") {
    if (images.empty() || u_file.empty()) throw ConfigError("gen corrupt-images: --images and --u are required");
    const Matrix img = read_idx_images(images);
    const Vector u = read_u_file(u_file);
    prepare_output_dir(out, inv.overwrite);
    const Matrix res = corrupt_images(img, u, lambda, Rng(seed, Stream::corrupt));
    write_f64(out / "images.f64", res);
    manifest["kind"] = "images";
    manifest["rows"] = res.rows();
    manifest["cols"] = res.cols();
    manifest["generator"] = {{"kind", "corrupt-images"},
                             {"seed", seed},
                             {"images", abs_string(images)},
                             {"u", abs_string(u_file)},
                             {"lambda", lambda}};
    manifest["files"] = {"images.f64"};
    manifest["finished"] = utc_timestamp();
    write_json_file(out / "manifest.json", manifest);
    std::cout << "corrupt-images: n=" << res.rows() << " pixels=" << res.cols() << " lambda=" << lambda << "\n";
  } else {
    throw ConfigError("gen: unknown kind '" + kind + "' (pairs | sim-tabular | corrupt-images)");
  }
  return 0;
}

namespace {

TabularDataset load_tabular_input(const fs::path& data, const fs::path& schema) {
  if (fs::is_directory(data)) return load_tabular(data);
  if (schema.empty()) throw ConfigError("tabular CSV input needs --schema");
  return load_tabular_csv(data, schema);
}

nlohmann::json tabular_input_ref(const fs::path& data, const fs::path& schema) {
  nlohmann::json j = {{"path", abs_string(data)}};
  if (!fs::is_directory(data)) j["schema"] = abs_string(schema);
  return j;
}

TabularDataset load_tabular_ref(const nlohmann::json& ref) {
  const fs::path data = ref.at("path").get<std::string>();
  const fs::path schema = ref.contains("schema") ? fs::path(ref.at("schema").get<std::string>()) : fs::path();
  return load_tabular_input(data, schema);
}

PairDataset load_pairs_ref(const nlohmann::json& ref) {
  if (ref.contains("path")) return load_pairs(ref.at("path").get<std::string>());
  const nlohmann::json& g = ref.at("generated");
  const auto ps = g.at("process_seed").get<std::uint64_t>();
  return gen_pairs(sample_sim_process(ps), g.at("n").get<Eigen::Index>(),
                   Rng(ps, Stream::data).split(g.at("split").get<std::uint64_t>()));
}

void write_split(const fs::path& path, const RowSplit& s, Eigen::Index n) {
  std::vector<const char*> tag(static_cast<std::size_t>(n), "train");
  for (Eigen::Index r : s.test) tag[static_cast<std::size_t>(r)] = "test";
  CsvWriter w(path, {"row", "split"});
  for (Eigen::Index i = 0; i < n; ++i) w.cell(static_cast<long long>(i)).cell(tag[static_cast<std::size_t>(i)]).end_row();
}

}  // namespace

int cmd_train(const Invocation& inv, const fs::path& config, const fs::path& data, const fs::path& schema,
              const fs::path& eval, const fs::path& out, const std::optional<std::uint64_t>& seed) {
  const nlohmann::json cj = read_json_file(config);
  nlohmann::json manifest = base_manifest(inv, "train");
  if (config_kind(cj) == RunKind::simulation) {
    SimulationRunConfig cfg = simulation_config_from_json(cj);
    if (seed) cfg.variant.seed = *seed;
    const PairDataset train = load_pairs(data);
    nlohmann::json inputs = {{"train", {{"path", abs_string(data)}}}};
    PairDataset ev;
    if (!eval.empty()) {
      ev = load_pairs(eval);
      inputs["eval"] = {{"path", abs_string(eval)}};
    } else if (cfg.n_eval > 0) {
      ev = default_eval_pairs(train, cfg.n_eval);
      inputs["eval"] = {{"generated", {{"process_seed", train.process_seed}, {"split", 1}, {"n", cfg.n_eval}}}};
    }
    prepare_output_dir(out, inv.overwrite);
    manifest["inputs"] = inputs;
    const TrainResult r = run_simulation(cfg, train, ev, out, manifest);
    std::cout << "train: variant " << cfg.variant.id << ", " << r.losses.size() << " steps";
    if (!r.records.empty()) {
      const DiagnosticsRecord& f = r.records.back();
      std::cout << ", final probe_acc(s_x)=" << f.sx.probe_acc << " agg_kl(s_x)=" << f.sx.agg_kl;
    }
    std::cout << "\n";
    return 0;
  }

  TabularRunConfig cfg = tabular_config_from_json(cj);
  if (seed) cfg.train.seed = *seed;
  const TabularDataset ds = load_tabular_input(data, schema);
  const RowSplit split = tabular_test_split(ds.size(), cfg.test_fraction, cfg.train.seed);
  const TabularDataset train = take_rows(ds, split.train);
  prepare_output_dir(out, inv.overwrite);
  const nlohmann::json full = to_json(cfg);
  write_json_file(out / "config.json", full);
  const TabularTrainResult r = train_tabular(cfg.train, train);
  write_losses(out / "losses.csv", r.losses);
  {
    CsvWriter w(out / "diagnostics.csv", {"epoch", "val_acc", "filtered_val_acc", "best"});
    for (const TabularProbeRecord& p : r.probes) {
      w.cell(p.epoch).cell(p.val_acc).cell(p.filtered_val_acc).cell(p.best ? 1 : 0).end_row();
    }
  }
  write_split(out / "split.csv", split, ds.size());
  save_tabular_model(out / "checkpoint.bin", r.model, {{"seed", cfg.train.seed}, {"best_epoch", r.best_epoch}});
  manifest["kind"] = "tabular";
  manifest["inputs"] = {{"data", tabular_input_ref(data, schema)}};
  manifest["config_hash"] = config_hash(full);
  manifest["seeds"] = {{"train", cfg.train.seed}, {"data", ds.seed}};
  finish_manifest(out, std::move(manifest));
  std::cout << "train: tabular, " << r.losses.size() << " steps, best epoch " << r.best_epoch << "\n";
  return 0;
}

namespace {

constexpr double kDropLevels[] = {0.0, 0.1, 0.2, 0.5};

void write_embeddings(const fs::path& path, const Matrix& emb, const std::vector<double>& uncertainty,
                      const std::vector<int>& labels, const std::vector<std::string>& split) {
  std::vector<std::string> header{"row"};
  for (Eigen::Index k = 0; k < emb.cols(); ++k) header.push_back("e" + std::to_string(k));
  header.insert(header.end(), {"uncertainty", "label"});
  if (!split.empty()) header.push_back("split");
  CsvWriter w(path, header);
  for (Eigen::Index i = 0; i < emb.rows(); ++i) {
    w.cell(static_cast<long long>(i));
    for (Eigen::Index k = 0; k < emb.cols(); ++k) w.cell(emb(i, k));
    w.cell(uncertainty[static_cast<std::size_t>(i)]).cell(labels[static_cast<std::size_t>(i)]);
    if (!split.empty()) w.cell(split[static_cast<std::size_t>(i)]);
    w.end_row();
  }
}

Matrix select_rows(const Matrix& m, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

template <typename T>
std::vector<T> select(const std::vector<T>& v, const std::vector<Eigen::Index>& rows) {
  std::vector<T> out;
  out.reserve(rows.size());
  for (Eigen::Index r : rows) out.push_back(v[static_cast<std::size_t>(r)]);
  return out;
}

int probe_tabular(const Invocation& inv, const fs::path& run, const fs::path& out, const std::string& uncertainty,
                  const std::optional<std::uint64_t>& seed) {
  const nlohmann::json manifest_in = read_json_file(run / "manifest.json");
  const TabularRunConfig cfg = tabular_config_from_json(read_json_file(run / "config.json"));
  if (!fs::exists(run / "checkpoint.bin")) throw ConfigError("no checkpoint in " + run.string());
  const auto [model, meta] = load_tabular_model(run / "checkpoint.bin");
  const TabularDataset ds = load_tabular_ref(manifest_in.at("inputs").at("data"));
  const RowSplit split = tabular_test_split(ds.size(), cfg.test_fraction, cfg.train.seed);

  UncertaintyAgg agg = cfg.uncertainty;
  if (uncertainty == "mean") {
    agg = UncertaintyAgg::mean;
  } else if (uncertainty == "p90") {
    agg = UncertaintyAgg::p90;
  } else if (!uncertainty.empty()) {
    throw ConfigError("probe: --uncertainty must be 'mean' or 'p90'");
  }
  const EmbeddingsWithUncertainty ex = extract_embeddings_uncertainty(model, ds, agg);
  std::vector<double> unc(ex.uncertainty.data(), ex.uncertainty.data() + ex.uncertainty.size());

  ProbeConfig pc = cfg.train.probe;
  pc.seed = seed.value_or(cfg.train.seed);
  const ProbeResult pr = train_linear_probe(select_rows(ex.embeddings, split.train), select(ds.label, split.train),
                                            select_rows(ex.embeddings, split.test), select(ds.label, split.test), pc);
  const Matrix test_emb = select_rows(ex.embeddings, split.test);
  const std::vector<int> pred = pr.predict(test_emb);
  const std::vector<int> test_labels = select(ds.label, split.test);
  const std::vector<double> test_unc = select(unc, split.test);

  prepare_output_dir(out, inv.overwrite);
  nlohmann::json metrics = {{"kind", "tabular"},
                            {"uncertainty", agg == UncertaintyAgg::p90 ? "p90" : "mean"},
                            {"n_train", split.train.size()},
                            {"n_test", split.test.size()},
                            {"accuracy", accuracy(pred, test_labels)}};
  {
    CsvWriter w(out / "selective.csv", {"drop_fraction", "accuracy"});
    nlohmann::json sel = nlohmann::json::object();
    for (double d : kDropLevels) {
      const double a = selective_accuracy(pred, test_labels, test_unc, d);
      w.cell(d).cell(a).end_row();
      sel[format_double(d)] = a;
    }
    metrics["selective_accuracy"] = sel;
  }
  std::vector<bool> correct(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) correct[i] = pred[i] == test_labels[i];
  {
    CsvWriter w(out / "risk_coverage.csv", {"coverage", "accuracy", "risk"});
    for (const CoveragePoint& p : risk_coverage(correct, test_unc)) {
      w.cell(p.coverage).cell(p.accuracy).cell(1.0 - p.accuracy).end_row();
    }
  }
  Vector test_u(static_cast<Eigen::Index>(split.test.size()));
  for (std::size_t i = 0; i < split.test.size(); ++i) test_u(static_cast<Eigen::Index>(i)) = ds.u(split.test[i]);
  const std::vector<bool> positive = high_quantile_flags(test_u, 0.9);
  const auto n_pos = std::count(positive.begin(), positive.end(), true);
  metrics["ambiguity_positive_definition"] = "u above its 0.9 quantile (nearest rank) on the test split";
  metrics["n_positive"] = n_pos;
  if (n_pos > 0 && n_pos < static_cast<long>(positive.size())) {
    metrics["auc"] = roc_auc(test_unc, positive);
    CsvWriter w(out / "roc.csv", {"threshold", "fpr", "tpr"});
    for (const RocPoint& p : roc_curve(test_unc, positive)) w.cell(p.threshold).cell(p.fpr).cell(p.tpr).end_row();
  } else {
    metrics["auc"] = nullptr;  // u is constant on the test split
  }
  std::vector<std::string> tag(static_cast<std::size_t>(ds.size()), "train");
  for (Eigen::Index r : split.test) tag[static_cast<std::size_t>(r)] = "test";
  write_embeddings(out / "embeddings.csv", ex.embeddings, unc, ds.label, tag);
  write_json_file(out / "probe.json", metrics);

  nlohmann::json manifest = base_manifest(inv, "probe");
  manifest["inputs"] = {{"run", abs_string(run)}};
  manifest["seeds"] = {{"probe", pc.seed}};
  finish_manifest(out, std::move(manifest));

  std::cout << "probe: accuracy " << metrics["accuracy"].get<double>();
  for (double d : kDropLevels) std::cout << ", drop " << d << ": " << metrics["selective_accuracy"][format_double(d)];
  if (!metrics["auc"].is_null()) std::cout << ", AUC " << metrics["auc"].get<double>();
  std::cout << "\n";
  return 0;
}

int probe_simulation(const Invocation& inv, const fs::path& run, const fs::path& out,
                     const std::optional<std::uint64_t>& seed) {
  const nlohmann::json manifest_in = read_json_file(run / "manifest.json");
  const SimulationRunConfig cfg = simulation_config_from_json(read_json_file(run / "config.json"));
  if (!fs::exists(run / "checkpoint.bin")) throw ConfigError("no checkpoint in " + run.string());
  const auto [model, meta] = load_checkpoint(run / "checkpoint.bin");
  const nlohmann::json& inputs = manifest_in.at("inputs");
  const PairDataset ev = load_pairs_ref(inputs.contains("eval") ? inputs.at("eval") : inputs.at("train"));

  const EmbeddingBatch eb = embed_batch(model, ev.x, ev.y);
  ProbeConfig pc = cfg.variant.probe;
  if (seed) pc.seed = *seed;
  const ProbeResult px = train_linear_probe(eb.sx_mean, ev.c, pc);
  const ProbeResult py = train_linear_probe(eb.sy_mean, ev.c, pc);

  prepare_output_dir(out, inv.overwrite);
  std::vector<double> unc(static_cast<std::size_t>(ev.size()));
  for (Eigen::Index i = 0; i < ev.size(); ++i) unc[static_cast<std::size_t>(i)] = eb.sy_std.row(i).mean();
  write_embeddings(out / "embeddings.csv", eb.sx_mean, unc, ev.c, {});
  const nlohmann::json metrics = {{"kind", "simulation"},
                                  {"embedding", "posterior mean"},
                                  {"n", ev.size()},
                                  {"probe_acc_sx", px.eval_acc},
                                  {"probe_acc_sy", py.eval_acc},
                                  {"agg_kl_sx", aggregated_kl(eb.sx_mean)},
                                  {"agg_kl_sy", aggregated_kl(eb.sy_mean)}};
  write_json_file(out / "probe.json", metrics);
  nlohmann::json manifest = base_manifest(inv, "probe");
  manifest["inputs"] = {{"run", abs_string(run)}};
  manifest["seeds"] = {{"probe", pc.seed}};
  finish_manifest(out, std::move(manifest));
  std::cout << "probe: probe_acc(s_x)=" << px.eval_acc << " probe_acc(s_y)=" << py.eval_acc << "\n";
  return 0;
}

}  // namespace

int cmd_probe(const Invocation& inv, const fs::path& run, const fs::path& out, const std::string& uncertainty,
              const std::optional<std::uint64_t>& seed) {
  if (!fs::is_directory(run)) throw ConfigError("probe: " + run.string() + " is not a run directory");
  if (!fs::exists(run / "checkpoint.bin")) throw ConfigError("probe: no checkpoint in " + run.string());
  const fs::path dest = out.empty() ? run / "probe" : out;
  const nlohmann::json cj = read_json_file(run / "config.json");
  if (config_kind(cj) == RunKind::tabular) return probe_tabular(inv, run, dest, uncertainty, seed);
  return probe_simulation(inv, run, dest, seed);
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string report_table(const CsvTable& t) {
  static const char* metrics[] = {"probe_acc", "agg_kl", "sigreg_mse", "cov_frob_dev", "mean_norm"};
  std::ostringstream md;
  md << "| variant | seeds | block | probe acc | agg KL | SIGReg MSE | cov dev | mean norm |\n";
  md << "|---|---|---|---|---|---|---|---|\n";
  for (const auto& row : t.rows) {
    for (const char* block : {"sx", "sy"}) {
      md << "| " << row[t.column("variant")] << " | " << row[t.column("n_seeds")] << " | s_" << (block[1]) << " |";
      for (const char* m : metrics) {
        const std::string base = std::string(block) + "_" + m;
        md << " " << fmt(parse_double(row[t.column(base + "_mean")])) << " ± "
           << fmt(parse_double(row[t.column(base + "_std")])) << " |";
      }
      md << "\n";
    }
  }
  md << "\n| variant | coupling KL |\n|---|---|\n";
  for (const auto& row : t.rows) {
    md << "| " << row[t.column("variant")] << " | " << fmt(parse_double(row[t.column("coupling_kl_mean")])) << " ± "
       << fmt(parse_double(row[t.column("coupling_kl_std")])) << " |\n";
  }
  return md.str();
}

std::string report_run(const fs::path& run) {
  std::ostringstream md;
  const nlohmann::json manifest = read_json_file(run / "manifest.json");
  const nlohmann::json cfg = read_json_file(run / "config.json");
  md << "# Run " << run.filename().string() << "\n\n";
  md << "- kind: " << cfg.value("kind", "?") << "\n";
  if (cfg.contains("variant")) md << "- variant: " << cfg["variant"].get<std::string>() << "\n";
  md << "- seed: " << cfg.value("seed", std::uint64_t{0}) << "\n";
  md << "- config hash: " << manifest.value("config_hash", "") << "\n\n";
  const CsvTable diag = read_csv(run / "diagnostics.csv");
  if (!diag.rows.empty()) {
    md << "## Final diagnostics (epoch " << diag.rows.back()[0] << ")\n\n| metric | value |\n|---|---|\n";
    for (std::size_t c = 1; c < diag.header.size(); ++c) {
      md << "| " << diag.header[c] << " | " << fmt(parse_double(diag.rows.back()[c])) << " |\n";
    }
    md << "\n";
  }
  if (fs::exists(run / "probe" / "probe.json")) {
    const nlohmann::json p = read_json_file(run / "probe" / "probe.json");
    md << "## Probe\n\n| metric | value |\n|---|---|\n";
    for (const auto& [k, v] : p.items()) {
      if (v.is_number()) {
        md << "| " << k << " | " << fmt(v.get<double>()) << " |\n";
      } else if (v.is_object()) {
        for (const auto& [k2, v2] : v.items()) md << "| " << k << " @ " << k2 << " | " << fmt(v2.get<double>()) << " |\n";
      }
    }
  }
  return md.str();
}

}  // namespace

int cmd_report(const Invocation& inv, const fs::path& in, const fs::path& out) {
  std::string body;
  fs::path default_out;
  if (fs::is_regular_file(in)) {
    body = "# Ablation table\n\n" + report_table(read_csv(in));
    default_out = in.parent_path() / "report.md";
  } else if (fs::exists(in / "table.csv")) {
    body = "# Ablation table\n\n" + report_table(read_csv(in / "table.csv"));
    if (fs::exists(in / "runs.csv")) {
      const CsvTable runs = read_csv(in / "runs.csv");
      std::string failed;
      for (const auto& r : runs.rows) {
        if (r[runs.column("status")] != "ok") failed += "- " + r[runs.column("variant")] + " seed " + r[runs.column("seed_index")] + ": " + r[runs.column("error")] + "\n";
      }
      if (!failed.empty()) body += "\n## Failed runs\n\n" + failed;
    }
    default_out = in / "report.md";
  } else if (fs::exists(in / "manifest.json") && fs::exists(in / "config.json")) {
    body = report_run(in);
    default_out = in / "report.md";
  } else {
    throw ConfigError("report: " + in.string() + " is neither a run directory nor an ablation table");
  }
  const fs::path dest = out.empty() ? default_out : out;
  prepare_output_file(dest, inv.overwrite);
  std::ofstream f(dest, std::ios::trunc);
  if (!f) throw ConfigError("cannot write " + dest.string());
  f << body;
  std::cout << "report: wrote " << dest.string() << "\n";
  return 0;
}

}  // namespace cli
}  // namespace varjepa
