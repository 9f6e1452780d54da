#pragma once

#include "varjepa/nn.hpp"

#include <json.hpp>

#include <filesystem>

namespace varjepa {

/// Layout: "VJCK" | u64 LE header length | JSON header | raw f64 LE blocks.
/// The header's "params" array lists (name, shape) in block order.
void write_archive(const std::filesystem::path& path, nlohmann::json header, const ParamStore& params);

struct Archive {
  nlohmann::json header;
  ParamStore params;
};

Archive read_archive(const std::filesystem::path& path);

nlohmann::json to_json(const MlpSpec& s);
MlpSpec mlp_spec_from_json(const nlohmann::json& j);

}  // namespace varjepa
