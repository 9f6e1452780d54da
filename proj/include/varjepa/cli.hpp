#pragma once

#include "varjepa/objective.hpp"
#include "varjepa/tabular.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace varjepa {

/// Entry point of the `varjepa` tool. Returns the process exit code:
/// 0 success, 2 usage/config error, 3 numerical failure.
int run_cli(int argc, char** argv);
int run_cli(const std::vector<std::string>& args);

enum class RunKind { simulation, tabular };

struct SimulationRunConfig {
  VariantConfig variant;
  EmbeddingSource diag_embedding = EmbeddingSource::sample;
  int n_eval = 2048;
};

struct TabularRunConfig {
  TabularConfig train;
  UncertaintyAgg uncertainty = UncertaintyAgg::p90;
  double test_fraction = 0.2;
};

/// Reads "kind" and dispatches. Missing keys keep their defaults; unknown
/// keys throw ConfigError listing every offending path.
RunKind config_kind(const nlohmann::json& j);
SimulationRunConfig simulation_config_from_json(const nlohmann::json& j);
TabularRunConfig tabular_config_from_json(const nlohmann::json& j);

/// Full enumeration of every field (what gets written to config.json).
nlohmann::json to_json(const SimulationRunConfig& c);
nlohmann::json to_json(const TabularRunConfig& c);

/// FNV-1a 64 over the canonical (sorted-key, compact) dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

// ---- run directories ----

/// Writes config.json, losses.csv, diagnostics.csv, checkpoint.bin and
/// manifest.json into `dir` (which must exist). Diagnostics use the training
/// seed for projections and posterior draws.
TrainResult run_simulation(const SimulationRunConfig& cfg, const PairDataset& train, const PairDataset& eval,
                           const std::filesystem::path& dir, const nlohmann::json& manifest_extra);

/// Eval pairs for a training set when none is given: same process, split 1
/// of the data stream.
PairDataset default_eval_pairs(const PairDataset& train, Eigen::Index n_eval);

/// Train/test row split of a tabular dataset, seeded from the run seed.
struct RowSplit {
  std::vector<Eigen::Index> train, test;
};
RowSplit tabular_test_split(Eigen::Index n, double test_fraction, std::uint64_t seed);
TabularDataset take_rows(const TabularDataset& ds, const std::vector<Eigen::Index>& rows);

// ---- ablation ----

struct AblationOptions {
  std::string suite = "ABCDEFGHIJ";
  int seeds = 3;
  std::uint64_t data_seed = 0;   // seed index i uses data_seed + i
  std::uint64_t seed = 0;        // training seed base, likewise + i
  Eigen::Index n_train = 8192;
  int jobs = 1;
  /// Non-weight settings shared by every run (weights come from the variant).
  SimulationRunConfig base;
};

struct AblationCell {
  std::string variant;
  int seed_index = 0;
  bool ok = false;
  std::string error;
  DiagnosticsRecord final_record;
  std::filesystem::path dir;
};

/// Runs suite x seeds into out/runs/{V}_s{i}; a failing run is recorded and
/// the rest continue. Writes runs.csv and table.csv into `out`.
std::vector<AblationCell> run_ablation(const AblationOptions& opt, const std::filesystem::path& out);

std::vector<std::string> ablation_table_header();
/// Mean and sample std over successful seeds, one row per variant in suite order.
void write_ablation_table(const std::filesystem::path& path, const std::string& suite,
                          const std::vector<AblationCell>& cells);

}  // namespace varjepa
