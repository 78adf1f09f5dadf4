#pragma once

// The annotator (an FPN-style decoder over the feature pyramid) and two small
// segmentors. Each network is declared once as an ordered layer layout; the
// forward pass is a template over the value kind (Tensor, Var, Dual) so the
// same code serves evaluation, reverse mode and forward mode.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gmlabel/ad/ops.hpp"
#include "gmlabel/checkpoint.hpp"
#include "gmlabel/params.hpp"
#include "gmlabel/rng.hpp"

namespace gmlabel::models {

enum class Arch { annotator, unet_s, convstack };

inline std::string_view arch_name(Arch a) {
  switch (a) {
    case Arch::annotator: return "annotator";
    case Arch::unet_s: return "unet-s";
    case Arch::convstack: return "convstack";
  }
  return "?";
}

inline Arch parse_arch(std::string_view s) {
  if (s == "annotator") return Arch::annotator;
  if (s == "unet-s" || s == "unet_s") return Arch::unet_s;
  if (s == "convstack") return Arch::convstack;
  throw Error("unknown_arch", "unknown architecture '" + std::string(s) + "' (expected unet-s, convstack or annotator)");
}

struct LayerDecl {
  LayerInfo info;
  Shape shape;
  std::size_t fan_in = 1;
};

using Layout = std::vector<LayerDecl>;

namespace detail {

inline void conv_layer(Layout& l, const std::string& id, std::size_t cin, std::size_t cout, std::size_t k,
                       LayerGroup group, bool matchable) {
  l.push_back({{id + ".w", LayerKind::conv, 0, matchable, group}, {cout, cin, k, k}, cin * k * k});
  l.push_back({{id + ".b", LayerKind::bias, 0, false, group}, {cout}, cin * k * k});
}

}  // namespace detail

// ---- annotator -------------------------------------------------------------

struct AnnotatorSpec {
  std::vector<std::size_t> levels = {8, 16, 32, 64};
  std::size_t in_channels = 12;
  std::size_t width = 32;
  std::size_t num_classes = 6;
};

inline Layout annotator_layout(const AnnotatorSpec& s) {
  if (s.levels.empty() || s.width == 0 || s.num_classes < 2 || s.in_channels == 0)
    throw ConfigError("annotator: levels, width, in_channels and num_classes must be positive");
  Layout l;
  for (auto L : s.levels) detail::conv_layer(l, "lat" + std::to_string(L), s.in_channels, s.width, 1, LayerGroup::none, false);
  for (auto L : s.levels) detail::conv_layer(l, "fuse" + std::to_string(L), s.width, s.width, 3, LayerGroup::none, false);
  detail::conv_layer(l, "head1", s.width, s.width, 3, LayerGroup::none, false);
  detail::conv_layer(l, "head2", s.width, s.width, 3, LayerGroup::none, false);
  detail::conv_layer(l, "logits", s.width, s.num_classes, 1, LayerGroup::none, false);
  return l;
}

// ---- segmentors ------------------------------------------------------------

struct SegmentorSpec {
  Arch arch = Arch::unet_s;
  std::size_t num_classes = 6;
  std::size_t image_size = 64;
  std::size_t input_resolution = 0;  // 0 means native
  std::vector<std::size_t> widths = {16, 32, 64};
  std::size_t depth = 6;  // convstack only

  std::size_t effective_resolution() const { return input_resolution == 0 ? image_size : input_resolution; }

  static SegmentorSpec for_arch(Arch a, std::size_t num_classes, std::size_t image_size) {
    SegmentorSpec s;
    s.arch = a;
    s.num_classes = num_classes;
    s.image_size = image_size;
    if (a == Arch::convstack) s.widths = {32};
    if (a == Arch::annotator) throw ConfigError("segmentor: 'annotator' is not a segmentor architecture");
    return s;
  }
};

inline Layout segmentor_layout(const SegmentorSpec& s) {
  const std::size_t r = s.effective_resolution();
  if (r == 0 || r > s.image_size || s.image_size % r != 0 || ((s.image_size / r) & (s.image_size / r - 1)) != 0)
    throw ConfigError("segmentor: input_resolution must be image_size / 2^k");
  if (s.widths.empty()) throw ConfigError("segmentor: widths must be nonempty");
  Layout l;
  using G = LayerGroup;
  if (s.arch == Arch::unet_s) {
    if (r % (std::size_t{1} << (s.widths.size() - 1)) != 0)
      throw ConfigError("segmentor: resolution not divisible by the unet pooling depth");
    std::size_t cin = 3;
    for (std::size_t i = 0; i < s.widths.size(); ++i) {
      detail::conv_layer(l, "enc" + std::to_string(i + 1) + "a", cin, s.widths[i], 3, G::backbone, true);
      detail::conv_layer(l, "enc" + std::to_string(i + 1) + "b", s.widths[i], s.widths[i], 3, G::backbone, true);
      cin = s.widths[i];
    }
    for (std::size_t i = s.widths.size() - 1; i-- > 0;) {
      detail::conv_layer(l, "dec" + std::to_string(i + 1) + "a", cin + s.widths[i], s.widths[i], 3, G::decoder, true);
      detail::conv_layer(l, "dec" + std::to_string(i + 1) + "b", s.widths[i], s.widths[i], 3, G::decoder, true);
      cin = s.widths[i];
    }
    detail::conv_layer(l, "head", cin, s.num_classes, 1, G::head, true);
  } else if (s.arch == Arch::convstack) {
    if (s.depth < 2) throw ConfigError("segmentor: convstack depth must be >= 2");
    std::size_t cin = 3;
    for (std::size_t i = 0; i < s.depth; ++i) {
      detail::conv_layer(l, "conv" + std::to_string(i + 1), cin, s.widths[0], 3, i < s.depth / 2 ? G::backbone : G::decoder,
                         true);
      cin = s.widths[0];
    }
    detail::conv_layer(l, "head", cin, s.num_classes, 1, G::head, true);
  } else {
    throw ConfigError("segmentor: 'annotator' is not a segmentor architecture");
  }
  return l;
}

// ---- initialization and validation -----------------------------------------

// He-style fan-in scaled uniform for weights, zeros for biases.
template <class T>
ParamSet<T> init_params(const Layout& layout, std::uint64_t seed) {
  ParamSet<T> p;
  for (const auto& d : layout) {
    Tensor<T> t(d.shape);
    if (d.info.kind == LayerKind::conv || d.info.kind == LayerKind::dense) {
      Rng rng(mix_seed(stream_seed(seed, Stream::init), hash_string(d.info.id)));
      const double bound = std::sqrt(6.0 / static_cast<double>(d.fan_in));
      for (auto& v : t.storage()) v = static_cast<T>(rng.uniform(-bound, bound));
    }
    p.add(d.info, std::move(t));
  }
  return p;
}

template <class V>
void check_layout(const Layout& layout, std::span<const V> p, std::string_view who) {
  if (p.size() != layout.size())
    throw ShapeError(std::string(who) + ": expected " + std::to_string(layout.size()) + " parameter tensors, got " +
                     std::to_string(p.size()));
  for (std::size_t i = 0; i < p.size(); ++i)
    if (ad::value_of(p[i]).shape() != layout[i].shape)
      throw ShapeError(std::string(who) + ": parameter '" + layout[i].info.id + "' has shape " +
                       to_string(ad::value_of(p[i]).shape()) + ", expected " + to_string(layout[i].shape));
}

template <class T>
void check_layout(const Layout& layout, const ParamSet<T>& p, std::string_view who) {
  check_layout<Tensor<T>>(layout, std::span<const Tensor<T>>(p.tensors), who);
  for (std::size_t i = 0; i < p.size(); ++i)
    if (!(p.layers[i] == layout[i].info))
      throw ShapeError(std::string(who) + ": layer metadata mismatch at '" + layout[i].info.id + "'");
}

namespace detail {

template <class V>
class Cursor {
 public:
  explicit Cursor(std::span<const V> p) : p_(p) {}
  const V& next() { return p_[i_++]; }

 private:
  std::span<const V> p_;
  std::size_t i_ = 0;
};

template <class V>
V conv(Cursor<V>& c, const V& x) {
  const V& w = c.next();
  const V& b = c.next();
  return ad::bias_add(ad::conv2d(x, w), b);
}

template <class V>
V conv_relu(Cursor<V>& c, const V& x) {
  return ad::relu(conv(c, x));
}

}  // namespace detail

// ---- forwards --------------------------------------------------------------

template <class V>
V annotator_forward(const AnnotatorSpec& s, std::span<const V> p, std::span<const V> h) {
  const Layout layout = annotator_layout(s);
  check_layout(layout, p, "annotator_forward");
  if (h.size() != s.levels.size())
    throw ShapeError("annotator_forward: expected " + std::to_string(s.levels.size()) + " feature levels, got " +
                     std::to_string(h.size()));
  for (std::size_t i = 0; i < h.size(); ++i) {
    const Shape want = {s.in_channels, s.levels[i], s.levels[i]};
    if (ad::value_of(h[i]).shape() != want)
      throw ShapeError("annotator_forward: level " + std::to_string(i) + " has shape " +
                       to_string(ad::value_of(h[i]).shape()) + ", expected " + to_string(want));
  }
  detail::Cursor<V> c(p);
  std::vector<V> lat;
  for (std::size_t i = 0; i < h.size(); ++i) lat.push_back(detail::conv(c, h[i]));
  V merged = lat[0];
  V fused;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (i > 0) merged = ad::add(lat[i], ad::upsample2x(fused));
    fused = detail::conv_relu(c, merged);
  }
  V y = detail::conv_relu(c, fused);
  y = detail::conv_relu(c, y);
  return detail::conv(c, y);
}

template <class V>
V segmentor_forward(const SegmentorSpec& s, std::span<const V> p, const V& x) {
  const Layout layout = segmentor_layout(s);
  check_layout(layout, p, "segmentor_forward");
  const Shape want = {3, s.image_size, s.image_size};
  if (ad::value_of(x).shape() != want)
    throw ShapeError("segmentor_forward: input has shape " + to_string(ad::value_of(x).shape()) + ", expected " +
                     to_string(want));
  V in = x;
  std::size_t downs = 0;
  for (std::size_t r = s.image_size; r > s.effective_resolution(); r /= 2, ++downs) in = ad::avgpool2x(in);

  detail::Cursor<V> c(p);
  V out;
  if (s.arch == Arch::unet_s) {
    std::vector<V> skips;
    V cur = in;
    for (std::size_t i = 0; i < s.widths.size(); ++i) {
      if (i > 0) cur = ad::avgpool2x(cur);
      cur = detail::conv_relu(c, cur);
      cur = detail::conv_relu(c, cur);
      skips.push_back(cur);
    }
    for (std::size_t i = s.widths.size() - 1; i-- > 0;) {
      cur = ad::concat_channels(ad::upsample2x(cur), skips[i]);
      cur = detail::conv_relu(c, cur);
      cur = detail::conv_relu(c, cur);
    }
    out = detail::conv(c, cur);
  } else {
    V cur = in;
    for (std::size_t i = 0; i < s.depth; ++i) cur = detail::conv_relu(c, cur);
    out = detail::conv(c, cur);
  }
  for (std::size_t i = 0; i < downs; ++i) out = ad::upsample2x(out);
  return out;
}

template <class T>
Tensor<T> soft_labels(const Tensor<T>& logits) {
  require_finite(logits, "soft_labels input");
  return kernels::softmax(logits);
}

// Argmax over channels; ties resolve to the lowest class index.
template <class T>
LabelMap argmax_labels(const Tensor<T>& scores) {
  if (scores.rank() != 3) throw ShapeError("argmax_labels: expected (C,H,W), got " + to_string(scores.shape()));
  const std::size_t C = scores.dim(0), H = scores.dim(1), W = scores.dim(2);
  LabelMap m(H, W);
  for (std::size_t p = 0; p < H * W; ++p) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (scores[c * H * W + p] > scores[best * H * W + p]) best = c;
    m.data[p] = static_cast<std::uint8_t>(best);
  }
  return m;
}

// ---- model bundles ---------------------------------------------------------

template <class T>
struct Annotator {
  AnnotatorSpec spec;
  ParamSet<T> params;

  template <class V>
  V forward(std::span<const V> p, std::span<const V> h) const {
    return annotator_forward<V>(spec, p, h);
  }

  Tensor<T> logits(const std::vector<Tensor<T>>& h) const {
    return annotator_forward<Tensor<T>>(spec, std::span<const Tensor<T>>(params.tensors), std::span<const Tensor<T>>(h));
  }
};

template <class T>
struct Segmentor {
  SegmentorSpec spec;
  ParamSet<T> params;

  template <class V>
  V forward(std::span<const V> p, const V& x) const {
    return segmentor_forward<V>(spec, p, x);
  }

  Tensor<T> logits(const Tensor<T>& x) const {
    return segmentor_forward<Tensor<T>>(spec, std::span<const Tensor<T>>(params.tensors), x);
  }
};

template <class T>
Annotator<T> init_annotator(const AnnotatorSpec& s, std::uint64_t seed) {
  return {s, init_params<T>(annotator_layout(s), seed)};
}

template <class T>
Segmentor<T> init_segmentor(const SegmentorSpec& s, std::uint64_t seed) {
  return {s, init_params<T>(segmentor_layout(s), seed)};
}

inline nlohmann::json to_json(const AnnotatorSpec& s) {
  return {{"arch", "annotator"}, {"levels", s.levels}, {"in_channels", s.in_channels}, {"width", s.width},
          {"num_classes", s.num_classes}};
}

inline nlohmann::json to_json(const SegmentorSpec& s) {
  return {{"arch", arch_name(s.arch)}, {"num_classes", s.num_classes}, {"image_size", s.image_size},
          {"input_resolution", s.input_resolution}, {"widths", s.widths}, {"depth", s.depth}};
}

inline AnnotatorSpec annotator_spec_from_json(const nlohmann::json& j) {
  AnnotatorSpec s;
  s.levels = j.at("levels").get<std::vector<std::size_t>>();
  s.in_channels = j.at("in_channels").get<std::size_t>();
  s.width = j.at("width").get<std::size_t>();
  s.num_classes = j.at("num_classes").get<std::size_t>();
  return s;
}

inline SegmentorSpec segmentor_spec_from_json(const nlohmann::json& j) {
  SegmentorSpec s;
  s.arch = parse_arch(j.at("arch").get<std::string>());
  s.num_classes = j.at("num_classes").get<std::size_t>();
  s.image_size = j.at("image_size").get<std::size_t>();
  s.input_resolution = j.value("input_resolution", std::size_t{0});
  s.widths = j.at("widths").get<std::vector<std::size_t>>();
  s.depth = j.value("depth", std::size_t{6});
  return s;
}

template <class T>
void save_annotator(const Annotator<T>& a, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_params(a.params, to_json(a.spec)));
}

template <class T>
void save_segmentor(const Segmentor<T>& s, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_params(s.params, to_json(s.spec)));
}

template <class T>
Annotator<T> load_annotator(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const auto meta = checkpoint_meta(bytes);
  Annotator<T> a;
  try {
    a.spec = annotator_spec_from_json(meta);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(path.string() + ": missing annotator metadata: " + e.what());
  }
  a.params = deserialize_params<T>(bytes);
  try {
    check_layout(annotator_layout(a.spec), a.params, "load_annotator");
  } catch (const ShapeError& e) {
    throw CorruptCheckpoint(path.string() + ": " + e.what());
  }
  return a;
}

template <class T>
Segmentor<T> load_segmentor(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const auto meta = checkpoint_meta(bytes);
  Segmentor<T> s;
  try {
    s.spec = segmentor_spec_from_json(meta);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(path.string() + ": missing segmentor metadata: " + e.what());
  }
  s.params = deserialize_params<T>(bytes);
  try {
    check_layout(segmentor_layout(s.spec), s.params, "load_segmentor");
  } catch (const ShapeError& e) {
    throw CorruptCheckpoint(path.string() + ": " + e.what());
  }
  return s;
}

}  // namespace gmlabel::models
