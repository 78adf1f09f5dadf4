#pragma once

// Annotator-labeled synthetic datasets: in-memory generation, on-disk export
// and reload.
//
// Layout of an export directory:
//   manifest.json
//   images/000000.png   8-bit RGB
//   masks/000000.png    8-bit class indices (argmax of the soft labels)
//   soft/000000.f32     raw little-endian float32, (C,H,W) row-major
//   soft/000000.json    sidecar: shape, dtype, order
//   features/000000_L.f32/.json   optional, one pair per pyramid level

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gmlabel/checkpoint.hpp"
#include "gmlabel/io/png.hpp"
#include "gmlabel/models/models.hpp"
#include "gmlabel/world/world.hpp"

namespace gmlabel::harness {

struct Dataset {
  std::vector<Tensor<float>> images;
  std::vector<Tensor<float>> soft;  // (C,H,W) per-pixel class distributions
  std::vector<LabelMap> masks;
  std::vector<std::vector<Tensor<float>>> features;  // empty unless requested

  std::size_t size() const noexcept { return images.size(); }
};

struct DatasetManifest {
  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::string world_config_hash;
  std::string annotator_checkpoint_hash;
  std::string label_kind = "soft+hard";
  nlohmann::json world;
  nlohmann::json files = nlohmann::json::array();
};

inline nlohmann::json to_json(const DatasetManifest& m) {
  return {{"count", m.count},
          {"seed", m.seed},
          {"stream", stream_name(Stream::export_set)},
          {"world_config_hash", m.world_config_hash},
          {"annotator_checkpoint_hash", m.annotator_checkpoint_hash},
          {"label_kind", m.label_kind},
          {"world", m.world},
          {"files", m.files}};
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::string bytes_hash(const std::vector<unsigned char>& b) {
  return hex64(hash_string(std::string_view(reinterpret_cast<const char*>(b.data()), b.size())));
}

template <class T>
std::string annotator_hash(const models::Annotator<T>& ann) {
  return bytes_hash(serialize_params(ann.params, models::to_json(ann.spec)));
}

// Samples n scenes from the export stream and labels them with the annotator.
template <class T>
Dataset generate_dataset(const world::WorldConfig& wc, const models::Annotator<T>& ann, std::size_t n,
                         std::uint64_t seed, bool with_features = false) {
  if (n == 0) throw ConfigError("dataset: n must be >= 1");
  Dataset d;
  world::LatentStream stream(wc, seed, Stream::export_set);
  for (std::size_t i = 0; i < n; ++i) {
    auto s = stream.next_sample();
    std::vector<Tensor<T>> h;
    for (const auto& t : s.h) {
      if constexpr (std::is_same_v<T, float>)
        h.push_back(t);
      else
        h.push_back(t.template cast<T>());
    }
    Tensor<float> p;
    if constexpr (std::is_same_v<T, float>)
      p = models::soft_labels(ann.logits(h));
    else
      p = models::soft_labels(ann.logits(h)).template cast<float>();
    d.masks.push_back(models::argmax_labels(p));
    d.soft.push_back(std::move(p));
    d.images.push_back(std::move(s.x));
    if (with_features) d.features.push_back(std::move(s.h));
  }
  return d;
}

// Same images labeled by the renderer's oracle masks (one-hot soft labels).
inline Dataset oracle_dataset(const world::WorldConfig& wc, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ConfigError("dataset: n must be >= 1");
  Dataset d;
  world::LatentStream stream(wc, seed, Stream::export_set);
  for (std::size_t i = 0; i < n; ++i) {
    auto s = stream.next_sample();
    Tensor<float> p({wc.num_classes, s.y_star.height, s.y_star.width});
    for (std::size_t q = 0; q < s.y_star.size(); ++q) p[s.y_star.data[q] * s.y_star.size() + q] = 1.0f;
    d.soft.push_back(std::move(p));
    d.masks.push_back(std::move(s.y_star));
    d.images.push_back(std::move(s.x));
  }
  return d;
}

namespace detail {

inline std::string index_name(std::size_t i) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << i;
  return os.str();
}

inline void write_f32(const std::filesystem::path& path, const Tensor<float>& t) {
  std::vector<unsigned char> bytes(t.size() * 4);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(t[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<unsigned char>(u >> (8 * b));
  }
  write_file_bytes(path, bytes);
  nlohmann::json side = {{"shape", t.shape()}, {"dtype", "f32"}, {"order", "C"}, {"endianness", "little"}};
  std::ofstream(std::filesystem::path(path).replace_extension(".json")) << side.dump(2) << '\n';
}

inline Tensor<float> read_f32(const std::filesystem::path& path) {
  const auto side_path = std::filesystem::path(path).replace_extension(".json");
  std::ifstream in(side_path);
  if (!in) throw IoError(side_path.string() + ": missing sidecar");
  nlohmann::json side;
  try {
    in >> side;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(side_path.string() + ": " + e.what());
  }
  if (side.value("dtype", "") != "f32" || side.value("order", "") != "C")
    throw IoError(side_path.string() + ": unsupported dtype or order");
  const Shape shape = side.at("shape").get<Shape>();
  const auto bytes = read_file_bytes(path);
  Tensor<float> t(shape);
  if (bytes.size() != t.size() * 4)
    throw IoError(path.string() + ": payload has " + std::to_string(bytes.size()) + " bytes, sidecar implies " +
                  std::to_string(t.size() * 4));
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
    t[i] = std::bit_cast<float>(u);
  }
  return t;
}

}  // namespace detail

template <class T>
DatasetManifest export_dataset(const world::WorldConfig& wc, const models::Annotator<T>& ann, std::size_t n,
                               std::uint64_t seed, const std::filesystem::path& dir, bool with_features = false) {
  namespace fs = std::filesystem;
  const Dataset d = generate_dataset(wc, ann, n, seed, with_features);
  std::error_code ec;
  for (const char* sub : {"images", "masks", "soft"}) fs::create_directories(dir / sub, ec);
  if (with_features) fs::create_directories(dir / "features", ec);
  if (ec) throw IoError(dir.string() + ": " + ec.message());

  DatasetManifest m;
  m.count = n;
  m.seed = seed;
  m.world_config_hash = hex64(world::config_hash(wc));
  m.annotator_checkpoint_hash = annotator_hash(ann);
  m.world = world::to_json(wc);
  for (std::size_t i = 0; i < n; ++i) {
    const auto name = detail::index_name(i);
    nlohmann::json entry = {{"image", "images/" + name + ".png"},
                            {"mask", "masks/" + name + ".png"},
                            {"soft", "soft/" + name + ".f32"},
                            {"soft_sidecar", "soft/" + name + ".json"}};
    io::write_png(dir / entry["image"].get<std::string>(), io::to_image8(d.images[i]));
    io::write_png(dir / entry["mask"].get<std::string>(), io::to_image8(d.masks[i]));
    detail::write_f32(dir / entry["soft"].get<std::string>(), d.soft[i]);
    if (with_features) {
      nlohmann::json feats = nlohmann::json::array();
      for (std::size_t l = 0; l < d.features[i].size(); ++l) {
        const std::string f = "features/" + name + "_" + std::to_string(l) + ".f32";
        detail::write_f32(dir / f, d.features[i][l]);
        feats.push_back(f);
      }
      entry["features"] = feats;
    }
    m.files.push_back(entry);
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError((dir / "manifest.json").string() + ": cannot write");
  out << to_json(m).dump(2) << '\n';
  return m;
}

struct LoadedDataset {
  Dataset data;
  nlohmann::json manifest;
};

// Reloads an export, checking every listed file and that each stored mask is
// the argmax of its soft labels.
inline LoadedDataset load_dataset(const std::filesystem::path& dir) {
  LoadedDataset out;
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError((dir / "manifest.json").string() + ": not found");
  try {
    in >> out.manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError((dir / "manifest.json").string() + ": " + e.what());
  }
  const auto& files = out.manifest.at("files");
  if (files.size() != out.manifest.at("count").get<std::size_t>())
    throw IoError(dir.string() + ": manifest count does not match file list");
  if (files.empty()) throw ConfigError(dir.string() + ": dataset is empty");
  for (const auto& entry : files) {
    auto img = io::from_image8(io::read_png(dir / entry.at("image").get<std::string>()));
    auto mask = io::to_label_map(io::read_png(dir / entry.at("mask").get<std::string>()));
    auto soft = detail::read_f32(dir / entry.at("soft").get<std::string>());
    if (soft.rank() != 3 || soft.dim(1) != mask.height || soft.dim(2) != mask.width || img.dim(1) != mask.height ||
        img.dim(2) != mask.width)
      throw IoError(dir.string() + ": inconsistent shapes for " + entry.at("image").get<std::string>());
    if (models::argmax_labels(soft) != mask)
      throw IoError(dir.string() + ": mask " + entry.at("mask").get<std::string>() + " is not the argmax of its soft labels");
    if (entry.contains("features")) {
      std::vector<Tensor<float>> h;
      for (const auto& f : entry["features"]) h.push_back(detail::read_f32(dir / f.get<std::string>()));
      out.data.features.push_back(std::move(h));
    }
    out.data.images.push_back(std::move(img));
    out.data.masks.push_back(std::move(mask));
    out.data.soft.push_back(std::move(soft));
  }
  return out;
}

}  // namespace gmlabel::harness
