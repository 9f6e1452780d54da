#include "common.hpp"

#include "varjepa/csv.hpp"
#include "varjepa/errors.hpp"

#include <atomic>
#include <cmath>
#include <iostream>
#include <mutex>
#include <thread>

namespace fs = std::filesystem;

namespace varjepa {

namespace {

const char* const kBlockMetrics[] = {"probe_acc", "agg_kl", "sigreg_mse", "cov_frob_dev", "mean_norm"};

double metric(const BlockMetrics& b, int k) {
  switch (k) {
    case 0:
      return b.probe_acc;
    case 1:
      return b.agg_kl;
    case 2:
      return b.sigreg_mse;
    case 3:
      return b.cov_frob_dev;
    default:
      return b.mean_norm;
  }
}

/// Sample standard deviation; 0 for a single value.
std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {std::nan(""), std::nan("")};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return s;
}

void write_runs_csv(const fs::path& path, const std::vector<AblationCell>& cells) {
  std::vector<std::string> header{"variant", "seed_index", "status", "error"};
  for (const auto& h : DiagnosticsRecord::csv_header()) header.push_back(h);
  CsvWriter w(path, header);
  for (const AblationCell& c : cells) {
    w.cell(c.variant).cell(c.seed_index).cell(c.ok ? "ok" : "failed").cell(one_line(c.error));
    if (c.ok) {
      w.cell(c.final_record.epoch);
      const std::vector<double> v = c.final_record.csv_values();
      for (std::size_t i = 1; i < v.size(); ++i) w.cell(v[i]);
    } else {
      for (std::size_t i = 0; i < DiagnosticsRecord::csv_header().size(); ++i) w.cell("");
    }
    w.end_row();
  }
}

}  // namespace

std::vector<std::string> ablation_table_header() {
  std::vector<std::string> h{"variant", "n_seeds"};
  for (const char* block : {"sx", "sy"}) {
    for (const char* m : kBlockMetrics) {
      h.push_back(std::string(block) + "_" + m + "_mean");
      h.push_back(std::string(block) + "_" + m + "_std");
    }
  }
  h.push_back("coupling_kl_mean");
  h.push_back("coupling_kl_std");
  return h;
}

void write_ablation_table(const fs::path& path, const std::string& suite, const std::vector<AblationCell>& cells) {
  CsvWriter w(path, ablation_table_header());
  for (char v : suite) {
    std::vector<const DiagnosticsRecord*> recs;
    for (const AblationCell& c : cells) {
      if (c.ok && c.variant == std::string(1, v)) recs.push_back(&c.final_record);
    }
    w.cell(std::string(1, v)).cell(static_cast<long long>(recs.size()));
    for (int block = 0; block < 2; ++block) {
      for (int k = 0; k < 5; ++k) {
        std::vector<double> vals;
        for (const DiagnosticsRecord* r : recs) vals.push_back(metric(block == 0 ? r->sx : r->sy, k));
        const auto [m, s] = mean_std(vals);
        w.cell(m).cell(s);
      }
    }
    std::vector<double> vals;
    for (const DiagnosticsRecord* r : recs) vals.push_back(r->coupling_kl);
    const auto [m, s] = mean_std(vals);
    w.cell(m).cell(s);
    w.end_row();
  }
}

std::vector<AblationCell> run_ablation(const AblationOptions& opt, const fs::path& out) {
  if (opt.suite.empty()) throw ConfigError("ablate: suite must be nonempty");
  for (char v : opt.suite) {
    if (v < 'A' || v > 'J') throw ConfigError(std::string("ablate: unknown variant '") + v + "'");
  }
  if (opt.seeds < 1) throw ConfigError("ablate: --seeds must be >= 1");
  if (opt.jobs < 1) throw ConfigError("ablate: --jobs must be >= 1");
  if (opt.n_train < 1) throw ConfigError("ablate: --n must be >= 1");

  std::vector<PairDataset> train(static_cast<std::size_t>(opt.seeds)), eval(static_cast<std::size_t>(opt.seeds));
  for (int i = 0; i < opt.seeds; ++i) {
    const std::uint64_t ps = opt.data_seed + static_cast<std::uint64_t>(i);
    const SimProcess p = sample_sim_process(ps);
    train[static_cast<std::size_t>(i)] = gen_pairs(p, opt.n_train, Rng(ps, Stream::data).split(0));
    if (opt.base.n_eval > 0) eval[static_cast<std::size_t>(i)] = gen_pairs(p, opt.base.n_eval, Rng(ps, Stream::data).split(1));
  }

  std::vector<AblationCell> cells;
  for (char v : opt.suite) {
    for (int i = 0; i < opt.seeds; ++i) {
      AblationCell c;
      c.variant = std::string(1, v);
      c.seed_index = i;
      c.dir = out / "runs" / (c.variant + "_s" + std::to_string(i));
      cells.push_back(std::move(c));
    }
  }

  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto worker = [&] {
    for (std::size_t idx = next++; idx < cells.size(); idx = next++) {
      AblationCell& c = cells[idx];
      SimulationRunConfig cfg = opt.base;
      const VariantConfig v = make_variant(c.variant[0]);
      cfg.variant.id = v.id;
      cfg.variant.weights = v.weights;
      cfg.variant.anneal_steps_kl_sx = v.anneal_steps_kl_sx;
      cfg.variant.anneal_steps_kl_z = v.anneal_steps_kl_z;
      cfg.variant.anneal_steps_kl_sy = v.anneal_steps_kl_sy;
      cfg.variant.anneal_start = v.anneal_start;
      cfg.variant.seed = opt.seed + static_cast<std::uint64_t>(c.seed_index);
      const std::size_t si = static_cast<std::size_t>(c.seed_index);
      nlohmann::json extra = {
          {"command", "ablate"},
          {"version", cli::kVersion},
          {"inputs",
           {{"train", {{"generated", {{"process_seed", train[si].process_seed}, {"split", 0}, {"n", opt.n_train}}}}},
            {"eval", {{"generated", {{"process_seed", train[si].process_seed}, {"split", 1}, {"n", opt.base.n_eval}}}}}}}};
      try {
        fs::create_directories(c.dir);
        const TrainResult r = run_simulation(cfg, train[si], eval[si], c.dir, extra);
        if (r.records.empty()) throw InvalidInput("run produced no diagnostics (epochs or n_eval is 0)");
        c.final_record = r.records.back();
        c.ok = true;
      } catch (const std::exception& e) {
        c.ok = false;
        c.error = e.what();
      }
      std::lock_guard lock(log_mu);
      std::cerr << "ablate: " << c.variant << "_s" << c.seed_index << (c.ok ? " ok" : " FAILED: " + c.error) << "\n";
    }
  };
  {
    std::vector<std::jthread> pool;
    const int n_threads = std::min<int>(opt.jobs, static_cast<int>(cells.size()));
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }

  write_runs_csv(out / "runs.csv", cells);
  write_ablation_table(out / "table.csv", opt.suite, cells);
  return cells;
}

namespace cli {

int cmd_ablate(const Invocation& inv, const AblationOptions& opt, const fs::path& out) {
  if (opt.suite.empty()) throw ConfigError("ablate: suite must be nonempty");
  prepare_output_dir(out, inv.overwrite);
  nlohmann::json manifest = base_manifest(inv, "ablate");
  const nlohmann::json base = to_json(opt.base);
  write_json_file(out / "config.json", base);
  const std::vector<AblationCell> cells = run_ablation(opt, out);
  manifest["config_hash"] = config_hash(base);
  manifest["suite"] = opt.suite;
  manifest["seeds"] = {{"count", opt.seeds}, {"data_seed_base", opt.data_seed}, {"train_seed_base", opt.seed}};
  manifest["n_train"] = opt.n_train;
  manifest["jobs"] = opt.jobs;
  finish_manifest(out, std::move(manifest));
  int failed = 0;
  for (const AblationCell& c : cells) failed += c.ok ? 0 : 1;
  std::cout << "ablate: " << cells.size() - static_cast<std::size_t>(failed) << "/" << cells.size()
            << " runs succeeded; table at " << (out / "table.csv").string() << "\n";
  return failed == 0 ? 0 : 3;
}

}  // namespace cli
}  // namespace varjepa
