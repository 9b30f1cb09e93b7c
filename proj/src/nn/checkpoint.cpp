#include "cmbdet/nn/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cmb::nn {

namespace {

constexpr char kMagic[8] = {'C', 'M', 'B', 'C', 'K', 'P', 'T', '1'};

}  // namespace

void save_checkpoint(const std::string& path, const std::string& kind,
                     const nlohmann::json& config, const ParamRefs& params) {
  nlohmann::json meta;
  meta["kind"] = kind;
  meta["config"] = config;
  auto& tensors = meta["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const Param* p : params) {
    tensors.push_back({{"name", p->name},
                       {"shape", p->shape},
                       {"count", p->value.size()},
                       {"offset", offset}});
    offset += p->value.size() * sizeof(float);
  }
  const std::string header = meta.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path);
  f.write(kMagic, sizeof(kMagic));
  const std::uint64_t hlen = header.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const Param* p : params)
    f.write(reinterpret_cast<const char*>(p->value.data()),
            static_cast<std::streamsize>(p->value.size() * sizeof(float)));
  if (!f) throw std::runtime_error("short write to checkpoint " + path);
}

namespace {

nlohmann::json read_meta(std::ifstream& f, const std::string& path) {
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error(path + ": not a cmbdet checkpoint");
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string header(hlen, '\0');
  f.read(header.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw std::runtime_error(path + ": truncated checkpoint header");
  return nlohmann::json::parse(header);
}

}  // namespace

nlohmann::json load_checkpoint(const std::string& path,
                               const std::string& expect_kind,
                               const ParamRefs& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path);
  const nlohmann::json meta = read_meta(f, path);
  if (meta.at("kind").get<std::string>() != expect_kind)
    throw std::runtime_error(path + ": checkpoint kind is '" +
                             meta.at("kind").get<std::string>() + "', expected '" +
                             expect_kind + "'");

  const auto& tensors = meta.at("tensors");
  if (tensors.size() != params.size())
    throw std::runtime_error(path + ": parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = tensors[i];
    Param* p = params[i];
    if (t.at("name").get<std::string>() != p->name)
      throw std::runtime_error(path + ": parameter name mismatch at '" + p->name + "'");
    if (t.at("count").get<std::size_t>() != p->value.size())
      throw std::runtime_error(path + ": parameter size mismatch at '" + p->name + "'");
    f.read(reinterpret_cast<char*>(p->value.data()),
           static_cast<std::streamsize>(p->value.size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error(path + ": truncated checkpoint data");
  return meta.at("config");
}

nlohmann::json peek_checkpoint_config(const std::string& path, std::string* kind_out) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path);
  const nlohmann::json meta = read_meta(f, path);
  if (kind_out) *kind_out = meta.at("kind").get<std::string>();
  return meta.at("config");
}

}  // namespace cmb::nn
