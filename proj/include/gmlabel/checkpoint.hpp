#pragma once

// Checkpoint layout:
//   8 bytes   magic "GMLCKPT1"
//   8 bytes   header length N, little-endian u64
//   N bytes   JSON header {dtype, layers:[{id,kind,shape,node_axis,matchable,group}], payload_bytes, meta}
//   payload   every tensor's values in layer order, little-endian IEEE-754

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "gmlabel/params.hpp"

namespace gmlabel {

inline constexpr char kCheckpointMagic[8] = {'G', 'M', 'L', 'C', 'K', 'P', 'T', '1'};

namespace detail {

template <class U>
void put_le(std::vector<unsigned char>& out, U v) {
  unsigned char b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  out.insert(out.end(), b, b + sizeof(U));
}

template <class U>
U get_le(const unsigned char* p) {
  unsigned char b[sizeof(U)];
  std::memcpy(b, p, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  U v;
  std::memcpy(&v, b, sizeof(U));
  return v;
}

}  // namespace detail

template <class T>
std::vector<unsigned char> serialize_params(const ParamSet<T>& p, const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json header;
  header["dtype"] = dtype_name(dtype_of<T>());
  header["layers"] = nlohmann::json::array();
  std::size_t payload = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& l = p.layers[i];
    header["layers"].push_back({{"id", l.id},
                                {"kind", kind_name(l.kind)},
                                {"shape", p.tensors[i].shape()},
                                {"node_axis", l.node_axis},
                                {"matchable", l.matchable},
                                {"group", group_name(l.group)}});
    payload += p.tensors[i].size() * sizeof(T);
  }
  header["payload_bytes"] = payload;
  header["meta"] = meta;
  const std::string h = header.dump();

  std::vector<unsigned char> out(kCheckpointMagic, kCheckpointMagic + 8);
  detail::put_le<std::uint64_t>(out, h.size());
  out.insert(out.end(), h.begin(), h.end());
  out.reserve(out.size() + payload);
  for (const auto& t : p.tensors)
    for (T v : t.values()) detail::put_le<T>(out, v);
  return out;
}

namespace detail {

inline std::pair<nlohmann::json, std::size_t> read_header(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw CorruptCheckpoint("checkpoint: bad magic or truncated preamble");
  const auto hlen = get_le<std::uint64_t>(bytes.data() + 8);
  if (hlen > bytes.size() - 16) throw CorruptCheckpoint("checkpoint: truncated header");
  try {
    return {nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen)),
            static_cast<std::size_t>(hlen)};
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(std::string("checkpoint: malformed header: ") + e.what());
  }
}

}  // namespace detail

// Free-form metadata stored alongside the parameters (empty object if none).
inline nlohmann::json checkpoint_meta(const std::vector<unsigned char>& bytes) {
  auto [header, hlen] = detail::read_header(bytes);
  (void)hlen;
  return header.value("meta", nlohmann::json::object());
}

template <class T>
ParamSet<T> deserialize_params(const std::vector<unsigned char>& bytes) {
  auto [header, hlen] = detail::read_header(bytes);
  try {
    if (header.at("dtype").get<std::string>() != dtype_name(dtype_of<T>()))
      throw CorruptCheckpoint("checkpoint: dtype " + header.at("dtype").get<std::string>() + " does not match requested " +
                              std::string(dtype_name(dtype_of<T>())));
    const auto payload = header.at("payload_bytes").get<std::size_t>();
    const std::size_t offset = 16 + hlen;
    if (bytes.size() - offset != payload)
      throw CorruptCheckpoint("checkpoint: payload is " + std::to_string(bytes.size() - offset) + " bytes, header says " +
                              std::to_string(payload));
    ParamSet<T> p;
    std::size_t pos = offset;
    for (const auto& l : header.at("layers")) {
      LayerInfo info{l.at("id").get<std::string>(), parse_kind(l.at("kind").get<std::string>()),
                     l.at("node_axis").get<std::size_t>(), l.at("matchable").get<bool>(),
                     parse_group(l.at("group").get<std::string>())};
      Shape shape = l.at("shape").get<Shape>();
      const std::size_t n = numel(shape);
      if (pos + n * sizeof(T) > bytes.size()) throw CorruptCheckpoint("checkpoint: truncated payload");
      std::vector<T> data(n);
      for (std::size_t i = 0; i < n; ++i, pos += sizeof(T)) data[i] = detail::get_le<T>(bytes.data() + pos);
      p.add(std::move(info), Tensor<T>(std::move(shape), std::move(data)));
    }
    if (pos != bytes.size()) throw CorruptCheckpoint("checkpoint: trailing bytes after payload");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(std::string("checkpoint: bad header field: ") + e.what());
  } catch (const ShapeError& e) {
    throw CorruptCheckpoint(std::string("checkpoint: ") + e.what());
  }
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

template <class T>
void save(const ParamSet<T>& p, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_params(p));
}

template <class T>
ParamSet<T> load(const std::filesystem::path& path) {
  return deserialize_params<T>(read_file_bytes(path));
}

}  // namespace gmlabel
