#pragma once

// Helpers shared by the command implementations. Not installed.

#include "varjepa/cli.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace varjepa::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Everything a command needs besides its own options.
struct Invocation {
  std::vector<std::string> argv;
  bool overwrite = false;
};

std::string utc_timestamp(std::chrono::system_clock::time_point t = std::chrono::system_clock::now());

/// Creates `dir`. An existing non-empty directory is an error unless
/// `overwrite`, in which case it is cleared first.
void prepare_output_dir(const std::filesystem::path& dir, bool overwrite);
/// Same rule for a single output file.
void prepare_output_file(const std::filesystem::path& file, bool overwrite);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

/// Relative paths of every regular file under `dir`, sorted.
std::vector<std::string> list_artifacts(const std::filesystem::path& dir);

/// Adds artifacts and the finish time, then writes dir/manifest.json.
void finish_manifest(const std::filesystem::path& dir, nlohmann::json manifest);

nlohmann::json base_manifest(const Invocation& inv, const std::string& command);

void write_losses(const std::filesystem::path& path, const std::vector<LossRow>& rows);
void write_diagnostics(const std::filesystem::path& path, const std::vector<DiagnosticsRecord>& records);

int cmd_gen(const Invocation& inv, const std::string& kind, std::uint64_t seed, Eigen::Index n,
            const std::filesystem::path& out, int split, bool zero_ambiguity, const std::filesystem::path& images,
            const std::filesystem::path& u_file, double lambda);
int cmd_train(const Invocation& inv, const std::filesystem::path& config, const std::filesystem::path& data,
              const std::filesystem::path& schema, const std::filesystem::path& eval, const std::filesystem::path& out,
              const std::optional<std::uint64_t>& seed);
int cmd_ablate(const Invocation& inv, const AblationOptions& opt, const std::filesystem::path& out);
int cmd_probe(const Invocation& inv, const std::filesystem::path& run, const std::filesystem::path& out,
              const std::string& uncertainty, const std::optional<std::uint64_t>& seed);
int cmd_report(const Invocation& inv, const std::filesystem::path& in, const std::filesystem::path& out);

}  // namespace varjepa::cli
