#ifndef PROMPTCLASS_CHECKPOINT_HPP
#define PROMPTCLASS_CHECKPOINT_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptclass/errors.hpp"
#include "promptclass/params.hpp"
#include "promptclass/tensor.hpp"

namespace promptclass {

// Container layout: magic "PCLS" | u32 version | u64 header length |
// UTF-8 JSON header (config + named tensor directory with shapes and byte
// offsets) | raw little-endian float32 payloads in header order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; big-endian hosts need byte swaps");

template <typename T>
void write_raw(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParamStore<float>& params,
                            const nlohmann::json& config) {
  nlohmann::json header;
  header["config"] = config;
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : params.items()) {
    nlohmann::json entry;
    entry["name"] = name;
    entry["shape"] = t.dims;
    entry["offset"] = offset;
    tensors.push_back(entry);
    offset += static_cast<std::uint64_t>(t.size()) * sizeof(float);
  }
  header["tensors"] = tensors;
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out.write("PCLS", 4);
  detail::write_raw(out, kCheckpointVersion);
  detail::write_raw(out, static_cast<std::uint64_t>(header_str.size()));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& [name, t] : params.items())
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!out) throw DataError("failed writing checkpoint: " + path);
}

struct Checkpoint {
  ParamStore<float> params;
  nlohmann::json config;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "PCLS", 4) != 0)
    throw DataError("not a PCLS checkpoint: " + path);
  auto version = detail::read_raw<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  auto header_len = detail::read_raw<std::uint64_t>(in);
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError("truncated checkpoint header: " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("invalid checkpoint header: " + std::string(e.what()));
  }
  Checkpoint ckpt;
  ckpt.config = header.value("config", nlohmann::json::object());
  std::uint64_t expected_offset = 0;
  for (const auto& entry : header.at("tensors")) {
    std::string name = entry.at("name").get<std::string>();
    std::vector<std::size_t> dims = entry.at("shape").get<std::vector<std::size_t>>();
    auto offset = entry.at("offset").get<std::uint64_t>();
    if (offset != expected_offset)
      throw DataError("checkpoint tensor '" + name + "' offset mismatch");
    Tensor<float> t;
    if (dims.size() == 2)
      t = Tensor<float>::mat(dims[0], dims[1]);
    else if (dims.size() == 1)
      t = Tensor<float>::vec(dims[0]);
    else
      throw DataError("checkpoint tensor '" + name + "' has unsupported rank");
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!in) throw DataError("truncated checkpoint payload at tensor '" + name + "'");
    expected_offset += static_cast<std::uint64_t>(t.size()) * sizeof(float);
    ckpt.params.add(name, std::move(t));
  }
  return ckpt;
}

}  // namespace promptclass

#endif  // PROMPTCLASS_CHECKPOINT_HPP
