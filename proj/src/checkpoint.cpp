#include "cerberus/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "cerberus/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian float32");

namespace cerberus {

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw IoError("checkpoint tensor not found: " + name);
}

void Checkpoint::save(const std::string& path) const {
  nlohmann::json dir = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    dir[name] = {{"shape", t.shape()}, {"offset", offset}};
    offset += std::uint64_t(t.numel()) * sizeof(float);
  }
  nlohmann::json header = {
      {"kind", kind}, {"config", config}, {"tensors", dir}};
  const std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write("CRBS", 4);
  const std::uint32_t ver = kVersion;
  f.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
  const std::uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  f.write(hs.data(), std::streamsize(hs.size()));
  for (const auto& [name, t] : tensors)
    f.write(reinterpret_cast<const char*>(t.data()),
            std::streamsize(std::size_t(t.numel()) * sizeof(float)));
  if (!f) throw IoError("short write while saving checkpoint: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "CRBS", 4) != 0)
    throw IoError("bad checkpoint magic in " + path);
  std::uint32_t ver = 0;
  f.read(reinterpret_cast<char*>(&ver), sizeof(ver));
  if (ver != kVersion)
    throw IoError("unsupported checkpoint version in " + path);
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  f.read(hs.data(), std::streamsize(hlen));
  if (!f) throw IoError("truncated checkpoint header in " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint header in " + path + ": " + e.what());
  }

  Checkpoint ck;
  ck.kind = header.value("kind", "");
  ck.config = header.value("config", nlohmann::json::object());

  const std::streampos payload_start = f.tellg();
  // Directory keys come back alphabetically sorted; explicit offsets make
  // the payload order irrelevant.
  for (auto it = header["tensors"].begin(); it != header["tensors"].end();
       ++it) {
    std::vector<std::int64_t> shape =
        it.value()["shape"].get<std::vector<std::int64_t>>();
    const auto offset = it.value()["offset"].get<std::uint64_t>();
    Tensor t(shape);
    f.seekg(payload_start + std::streampos(offset));
    f.read(reinterpret_cast<char*>(t.data()),
           std::streamsize(std::size_t(t.numel()) * sizeof(float)));
    if (!f) throw IoError("truncated tensor payload in " + path);
    ck.add(it.key(), t);
  }
  return ck;
}

}  // namespace cerberus
