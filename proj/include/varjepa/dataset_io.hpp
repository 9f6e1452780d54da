#pragma once

#include "varjepa/datagen.hpp"

#include <json.hpp>

#include <filesystem>

namespace varjepa {

/// Raw little-endian f64, row-major, no header (shape lives in the manifest).
void write_f64(const std::filesystem::path& path, const Matrix& m);
Matrix read_f64(const std::filesystem::path& path, Eigen::Index rows, Eigen::Index cols);

/// Directory layout: manifest.json plus one .f64 file per matrix/column.
/// `extra` is merged into the manifest (e.g. generator settings).
void save_pairs(const std::filesystem::path& dir, const PairDataset& ds, const nlohmann::json& extra = {});
PairDataset load_pairs(const std::filesystem::path& dir);

void save_tabular(const std::filesystem::path& dir, const TabularDataset& ds, const nlohmann::json& extra = {});
TabularDataset load_tabular(const std::filesystem::path& dir);

/// Plain CSV plus a JSON schema sidecar:
///   {"columns": [{"name": "...", "kind": "numeric" | "categorical" | "label" | "u",
///                 "cardinality": C}]}
/// Categorical cells hold integer codes; a "label" column is required.
TabularDataset load_tabular_csv(const std::filesystem::path& csv, const std::filesystem::path& schema);

nlohmann::json read_manifest(const std::filesystem::path& dir);

}  // namespace varjepa
