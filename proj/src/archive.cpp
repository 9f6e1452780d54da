#include "varjepa/archive.hpp"

#include "varjepa/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace varjepa {

namespace {

constexpr char kMagic[4] = {'V', 'J', 'C', 'K'};

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

}  // namespace

void write_archive(const std::filesystem::path& path, nlohmann::json header, const ParamStore& params) {
  nlohmann::json slots = nlohmann::json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    slots.push_back({{"name", params.name(i)}, {"shape", params[i].shape()}});
  }
  header["params"] = slots;
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  out.write(kMagic, 4);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto d = params[i].data();
    out.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
  }
  if (!out) throw ConfigError("write failed for " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw ConfigError("not a checkpoint file: " + path.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1u << 30)) throw ConfigError("corrupt checkpoint header: " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  Archive a;
  a.header = nlohmann::json::parse(text);
  std::vector<std::pair<std::string, Tensor>> slots;
  for (const auto& s : a.header.at("params")) {
    Tensor t(s.at("shape").get<std::vector<std::size_t>>());
    auto d = t.data();
    in.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
    if (!in) throw ConfigError("truncated checkpoint: " + path.string());
    slots.emplace_back(s.at("name").get<std::string>(), std::move(t));
  }
  a.params = ParamStore(std::move(slots));
  return a;
}

nlohmann::json to_json(const MlpSpec& s) {
  return {{"input_dim", s.input_dim},
          {"hidden_dims", s.hidden_dims},
          {"output_dim", s.output_dim},
          {"activation", to_string(s.activation)},
          {"final_activation", to_string(s.final_activation)}};
}

MlpSpec mlp_spec_from_json(const nlohmann::json& j) {
  MlpSpec s;
  s.input_dim = j.at("input_dim").get<int>();
  s.hidden_dims = j.at("hidden_dims").get<std::vector<int>>();
  s.output_dim = j.at("output_dim").get<int>();
  s.activation = activation_from_string(j.at("activation").get<std::string>());
  s.final_activation = activation_from_string(j.at("final_activation").get<std::string>());
  return s;
}

}  // namespace varjepa
