#pragma once

// Procedural stand-in for a frozen generator: a latent vector z is mapped to
// an articulated creature (body, head, eyes, legs, tail), rendered into an
// RGB image, and exposed through a pyramid of hidden features that are noisy
// linear mixtures of smoothed part-presence maps.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "gmlabel/rng.hpp"
#include "gmlabel/tensor.hpp"

namespace gmlabel::world {

inline const std::array<const char*, 6> kClassNames = {"background", "body", "head", "eye", "leg", "tail"};

// Part ids in the full six-class vocabulary.
enum Part : std::uint8_t { kBackground = 0, kBody = 1, kHead = 2, kEye = 3, kLeg = 4, kTail = 5 };

struct WorldConfig {
  std::size_t image_size = 64;
  std::size_t num_classes = 6;
  std::size_t latent_dim = 64;
  std::vector<std::size_t> pyramid_levels = {8, 16, 32, 64};
  std::size_t channels_per_level = 8;
  std::size_t nuisance_channels = 4;
  std::uint64_t mixing_seed = 2022;
  double quality = 1.0;
  bool ood = false;
  std::size_t min_part_pixels = 4;
  double texture_amplitude = 0.12;
  double pixel_noise = 0.02;
  double feature_noise = 0.05;
  double feature_blur = 0.6;  // Gaussian sigma in level pixels
  int max_redraws = 32;

  std::size_t feature_channels() const { return channels_per_level + nuisance_channels; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("world: " + m); };
    if (num_classes < 2 || num_classes > kClassNames.size()) fail("num_classes must be in [2,6]");
    if (latent_dim < 32) fail("latent_dim must be >= 32");
    if (pyramid_levels.empty()) fail("pyramid_levels must be nonempty");
    for (std::size_t i = 1; i < pyramid_levels.size(); ++i)
      if (pyramid_levels[i] <= pyramid_levels[i - 1]) fail("pyramid_levels must be strictly increasing");
    if (pyramid_levels.back() != image_size) fail("last pyramid level must equal image_size");
    for (auto l : pyramid_levels)
      if (l == 0 || image_size % l != 0 || ((image_size / l) & (image_size / l - 1)) != 0)
        fail("pyramid levels must be image_size / 2^k");
    if (!(quality >= 0.0 && quality <= 1.0)) fail("quality must be in [0,1]");
    if (channels_per_level == 0) fail("channels_per_level must be positive");
    if (nuisance_channels > 4) fail("at most 4 nuisance channels are defined");
    if (max_redraws < 0) fail("max_redraws must be nonnegative");
  }
};

inline nlohmann::json to_json(const WorldConfig& c) {
  return {{"image_size", c.image_size},
          {"num_classes", c.num_classes},
          {"latent_dim", c.latent_dim},
          {"pyramid_levels", c.pyramid_levels},
          {"channels_per_level", c.channels_per_level},
          {"nuisance_channels", c.nuisance_channels},
          {"mixing_seed", c.mixing_seed},
          {"quality", c.quality},
          {"ood", c.ood},
          {"min_part_pixels", c.min_part_pixels},
          {"texture_amplitude", c.texture_amplitude},
          {"pixel_noise", c.pixel_noise},
          {"feature_noise", c.feature_noise},
          {"feature_blur", c.feature_blur},
          {"max_redraws", c.max_redraws}};
}

inline std::uint64_t config_hash(const WorldConfig& c) { return hash_string(to_json(c).dump()); }

struct GenSample {
  std::vector<float> z;
  std::vector<Tensor<float>> h;  // one (channels, L, L) tensor per pyramid level
  Tensor<float> x;               // (3, H, W), values on the 8-bit grid k/255
  LabelMap y_star;
};

namespace detail {

inline double phi(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
inline double lerp(double a, double b, double t) { return a + (b - a) * t; }

struct Vec2 {
  double x, y;
};

inline Vec2 rotate(Vec2 v, double a) { return {v.x * std::cos(a) - v.y * std::sin(a), v.x * std::sin(a) + v.y * std::cos(a)}; }

struct Ellipse {
  Vec2 c;
  double a, b, rot;
  bool contains(Vec2 p) const {
    Vec2 d = rotate({p.x - c.x, p.y - c.y}, -rot);
    return (d.x * d.x) / (a * a) + (d.y * d.y) / (b * b) <= 1.0;
  }
};

struct Disk {
  Vec2 c;
  double r;
  bool contains(Vec2 p) const { return (p.x - c.x) * (p.x - c.x) + (p.y - c.y) * (p.y - c.y) <= r * r; }
};

struct Capsule {
  Vec2 p0, p1;
  double r;
  bool contains(Vec2 p) const {
    const double dx = p1.x - p0.x, dy = p1.y - p0.y;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((p.x - p0.x) * dx + (p.y - p0.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double qx = p0.x + t * dx - p.x, qy = p0.y + t * dy - p.y;
    return qx * qx + qy * qy <= r * r;
  }
};

using Color = std::array<double, 3>;

struct Creature {
  Ellipse body;
  Disk head;
  std::array<Disk, 2> eyes;
  std::array<Capsule, 4> legs;
  Capsule tail;
  std::array<Color, 6> colors;  // per part id
  Color bg_top, bg_bottom;
  double tex_freq, tex_angle, tex_phase;
  double light_angle;
  double grad_slope;
};

// Latent coordinates used below: u[0..40). The rest only seed noise.
inline Creature make_creature(const std::vector<float>& z, bool ood) {
  std::vector<double> u(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) u[i] = phi(z[i]);
  const double s = u[0] < 0.5 ? -1.0 : 1.0;
  const double limb = ood ? 1.3 : 1.0;
  Creature cr{};
  cr.body = {{0.5 - s * 0.07 + lerp(-0.05, 0.05, u[4]), lerp(0.40, 0.50, u[5])},
             lerp(0.22, 0.29, u[1]),
             lerp(0.13, 0.18, u[2]),
             lerp(-0.25, 0.25, u[3])};
  const auto& b = cr.body;
  auto local = [&](double lx, double ly) {
    Vec2 d = rotate({lx, ly}, b.rot);
    return Vec2{b.c.x + d.x, b.c.y + d.y};
  };
  const double hr = lerp(0.11, 0.15, u[6]);
  cr.head = {local(s * (b.a * 0.9 + hr * 0.35), -(b.b * 0.55 + lerp(0.0, 0.06, u[7]))), hr};
  const double er = lerp(0.034, 0.046, u[9]);
  const double ey = cr.head.c.y - hr * lerp(0.05, 0.3, u[10]);
  const double ex = cr.head.c.x + s * hr * lerp(0.40, 0.52, u[8]);
  cr.eyes[0] = {{ex, ey}, er};
  cr.eyes[1] = {{ex - s * er * lerp(2.4, 3.0, u[11]), ey + er * lerp(-0.4, 0.4, u[12])}, er};

  const std::array<double, 4> slots = {-0.62, -0.28, 0.28, 0.62};
  for (std::size_t i = 0; i < 4; ++i) {
    const Vec2 a = local(b.a * (slots[i] + lerp(-0.08, 0.08, u[13 + i])), b.b * 0.6);
    const double ang = lerp(-0.35, 0.35, u[17 + i]);
    const double len = lerp(0.16, 0.24, u[21 + i]);
    const double r = lerp(0.030, 0.042, u[25]) * limb;
    cr.legs[i] = {a, {a.x + std::sin(ang) * len, a.y + std::cos(ang) * len}, r};
  }
  {
    const Vec2 a = local(-s * b.a * 0.92, -b.b * 0.15);
    const double ph = lerp(0.2, 1.1, u[26]);
    const double len = lerp(0.14, 0.22, u[27]);
    cr.tail = {a, {a.x - s * std::cos(ph) * len, a.y - std::sin(ph) * len}, lerp(0.022, 0.032, u[28]) * limb};
  }

  Color base = {lerp(0.35, 0.9, u[29]), lerp(0.3, 0.85, u[30]), lerp(0.25, 0.8, u[31])};
  cr.colors[kBackground] = {0, 0, 0};
  cr.colors[kBody] = base;
  const double hs = lerp(0.85, 1.1, u[32]);
  cr.colors[kHead] = {base[0] * hs, base[1] * hs, base[2] * hs};
  cr.colors[kEye] = {lerp(0.02, 0.15, u[33]), lerp(0.02, 0.12, u[33]), lerp(0.05, 0.2, u[33])};
  cr.colors[kLeg] = {base[0] * 0.72, base[1] * 0.72, base[2] * 0.72};
  const double ts = lerp(0.55, 0.85, u[34]);
  cr.colors[kTail] = {base[0] * ts, base[1] * ts, base[2] * ts};
  cr.bg_top = {lerp(0.15, 0.75, u[35]), lerp(0.2, 0.8, u[36]), lerp(0.25, 0.85, u[37])};
  const double bs = lerp(0.6, 1.0, u[38]);
  cr.bg_bottom = {cr.bg_top[0] * bs, cr.bg_top[1] * bs, cr.bg_top[2] * bs};
  cr.tex_freq = lerp(14.0, 28.0, u[39]);
  cr.tex_angle = lerp(0.0, std::numbers::pi, u[14 % z.size()] * 0.5 + u[38] * 0.5);
  cr.tex_phase = 2 * std::numbers::pi * u[36 % z.size()] * u[37 % z.size()];
  cr.light_angle = 2 * std::numbers::pi * u[35 % z.size()];
  cr.grad_slope = lerp(-1.0, 1.0, u[33 % z.size()]);

  if (ood) {
    // Shifted palette: rotate color channels and lift towards saturated tones.
    for (auto& c : cr.colors) c = {std::min(1.0, c[2] * 1.15 + 0.05), c[0] * 0.9, std::min(1.0, c[1] * 1.1)};
    cr.bg_top = {cr.bg_top[2], cr.bg_top[0], cr.bg_top[1]};
    cr.bg_bottom = {cr.bg_bottom[2], cr.bg_bottom[0], cr.bg_bottom[1]};
  }
  return cr;
}

// Fold the six-part vocabulary into num_classes: parts beyond the class
// budget are absorbed into the body.
inline std::uint8_t fold_class(std::uint8_t part, std::size_t num_classes) {
  return part < num_classes ? part : static_cast<std::uint8_t>(kBody);
}

inline std::uint8_t part_at(const Creature& cr, Vec2 p) {
  // z-order: eye > head > tail > leg > body > background
  if (cr.eyes[0].contains(p) || cr.eyes[1].contains(p)) return kEye;
  if (cr.head.contains(p)) return kHead;
  if (cr.tail.contains(p)) return kTail;
  for (const auto& l : cr.legs)
    if (l.contains(p)) return kLeg;
  if (cr.body.contains(p)) return kBody;
  return kBackground;
}

inline double texture_at(const Creature& cr, Vec2 p) {
  const double t = p.x * std::cos(cr.tex_angle) + p.y * std::sin(cr.tex_angle);
  return std::sin(2 * std::numbers::pi * cr.tex_freq * t + cr.tex_phase);
}

inline LabelMap render_parts(const Creature& cr, std::size_t size) {
  LabelMap m(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      m.at(y, x) = part_at(cr, {(x + 0.5) / size, (y + 0.5) / size});
  return m;
}

inline Tensor<double> render_image(const Creature& cr, const LabelMap& parts, const WorldConfig& cfg,
                                   std::uint64_t noise_seed) {
  const std::size_t n = cfg.image_size;
  Tensor<double> img({3, n, n});
  Rng rng(noise_seed);
  const Vec2 light = {std::cos(cr.light_angle), std::sin(cr.light_angle)};
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const Vec2 p = {(x + 0.5) / n, (y + 0.5) / n};
      const std::uint8_t part = parts.at(y, x);
      Color c;
      if (part == kBackground) {
        const double t = std::clamp(p.y + 0.25 * cr.grad_slope * (p.x - 0.5), 0.0, 1.0);
        for (int k = 0; k < 3; ++k) c[k] = cr.bg_top[k] * (1 - t) + cr.bg_bottom[k] * t;
      } else {
        c = cr.colors[part];
        if (!cfg.ood) {
          const Vec2 ctr = part == kHead ? cr.head.c : cr.body.c;
          const double shade = 1.0 + 0.9 * ((p.x - ctr.x) * light.x + (p.y - ctr.y) * light.y);
          const double tex = part == kEye ? 0.0 : cfg.texture_amplitude * texture_at(cr, p);
          for (int k = 0; k < 3; ++k) c[k] = c[k] * shade + tex;
        }
      }
      const double noise = cfg.ood ? 0.0 : cfg.pixel_noise;
      for (std::size_t k = 0; k < 3; ++k) img.at(k, y, x) = std::clamp(c[k] + noise * rng.normal(), 0.0, 1.0);
    }
  return img;
}

inline std::vector<double> gaussian_kernel(double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<double> k(2 * r + 1);
  double s = 0;
  for (int i = -r; i <= r; ++i) s += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= s;
  return k;
}

// Separable Gaussian blur per channel with clamped borders.
inline void blur_inplace(Tensor<double>& t, double sigma) {
  if (sigma <= 1e-9) return;
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const int c = static_cast<int>(t.dim(0)), h = static_cast<int>(t.dim(1)), w = static_cast<int>(t.dim(2));
  std::vector<double> tmp(static_cast<std::size_t>(h * w));
  for (int ch = 0; ch < c; ++ch) {
    double* d = t.data() + static_cast<std::size_t>(ch) * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * d[y * w + std::clamp(x + i, 0, w - 1)];
        tmp[y * w + x] = s;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = 0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * tmp[std::clamp(y + i, 0, h - 1) * w + x];
        d[y * w + x] = s;
      }
  }
}

// Quality knob: blur with sigma (1-q)*2 px plus low-frequency structured
// noise of amplitude (1-q)*0.15. q = 1 is the identity.
inline void degrade(Tensor<double>& img, double q, std::uint64_t seed) {
  if (q >= 1.0) return;
  blur_inplace(img, (1.0 - q) * 2.0);
  Rng rng(seed);
  const double amp = (1.0 - q) * 0.15;
  struct Wave {
    double fx, fy, ph;
    std::array<double, 3> gain;
  };
  std::array<Wave, 4> waves;
  for (auto& wv : waves) {
    const double ang = rng.uniform(0, 2 * std::numbers::pi), f = rng.uniform(1.5, 5.0);
    wv = {f * std::cos(ang), f * std::sin(ang), rng.uniform(0, 2 * std::numbers::pi),
          {rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0)}};
  }
  const std::size_t n = img.dim(1);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double px = (x + 0.5) / n, py = (y + 0.5) / n;
      for (std::size_t k = 0; k < 3; ++k) {
        double s = 0;
        for (const auto& wv : waves) s += wv.gain[k] * std::sin(2 * std::numbers::pi * (wv.fx * px + wv.fy * py) + wv.ph);
        img.at(k, y, x) = std::clamp(img.at(k, y, x) + amp * s / 2.0, 0.0, 1.0);
      }
    }
}

inline Tensor<float> quantize_8bit(const Tensor<double>& img) {
  Tensor<float> out(img.shape());
  for (std::size_t i = 0; i < img.size(); ++i)
    out[i] = static_cast<float>(std::lround(std::clamp(img[i], 0.0, 1.0) * 255.0)) / 255.0f;
  return out;
}

inline std::uint64_t hash_latent(const std::vector<float>& z, std::uint64_t salt) {
  std::uint64_t h = splitmix64(salt);
  for (float v : z) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = mix_seed(h, bits);
  }
  return h;
}

inline std::vector<float> redraw_latent(const std::vector<float>& z, int attempt) {
  Rng rng(hash_latent(z, 0x5eed0000ull + static_cast<std::uint64_t>(attempt)));
  std::vector<float> out(z.size());
  for (auto& v : out) v = static_cast<float>(rng.normal());
  return out;
}

// Fixed random mixing matrix for one pyramid level: (channels_per_level, num_classes).
inline std::vector<double> mixing_matrix(const WorldConfig& cfg, std::size_t level_index) {
  Rng rng(mix_seed(cfg.mixing_seed, 0xfea7u + level_index));
  std::vector<double> m(cfg.channels_per_level * cfg.num_classes);
  for (auto& v : m) v = rng.normal() / std::sqrt(static_cast<double>(cfg.num_classes));
  return m;
}

inline std::vector<Tensor<float>> make_features(const Creature& cr, const LabelMap& mask, const WorldConfig& cfg,
                                                std::uint64_t noise_seed) {
  const std::size_t n = cfg.image_size, nc = cfg.num_classes;
  std::vector<Tensor<float>> out;
  Rng rng(noise_seed);
  for (std::size_t li = 0; li < cfg.pyramid_levels.size(); ++li) {
    const std::size_t L = cfg.pyramid_levels[li], f = n / L;
    Tensor<double> presence({nc, L, L});
    const double inv = 1.0 / static_cast<double>(f * f);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) presence.at(mask.at(y, x), y / f, x / f) += inv;
    blur_inplace(presence, cfg.feature_blur);

    const auto mix = mixing_matrix(cfg, li);
    Tensor<float> h({cfg.feature_channels(), L, L});
    for (std::size_t j = 0; j < cfg.channels_per_level; ++j)
      for (std::size_t p = 0; p < L * L; ++p) {
        double s = 0;
        for (std::size_t c = 0; c < nc; ++c) s += mix[j * nc + c] * presence[c * L * L + p];
        h[j * L * L + p] = static_cast<float>(s);
      }
    for (std::size_t y = 0; y < L; ++y)
      for (std::size_t x = 0; x < L; ++x) {
        const Vec2 p = {(x + 0.5) / L, (y + 0.5) / L};
        const double nuisance[4] = {texture_at(cr, p), 2 * p.x - 1, 2 * p.y - 1,
                                    std::clamp(p.y + 0.25 * cr.grad_slope * (p.x - 0.5), 0.0, 1.0)};
        for (std::size_t k = 0; k < cfg.nuisance_channels; ++k)
          h.at(cfg.channels_per_level + k, y, x) = static_cast<float>(nuisance[k]);
      }
    for (auto& v : h.storage()) v += static_cast<float>(cfg.feature_noise * rng.normal());
    out.push_back(std::move(h));
  }
  return out;
}

}  // namespace detail

struct SceneRender {
  detail::Creature creature;
  LabelMap parts;  // six-part vocabulary, before folding
  std::vector<float> z_used;
};

// Resolves degenerate draws by re-drawing from a hash of z.
inline SceneRender build_scene(const std::vector<float>& z, const WorldConfig& cfg) {
  std::vector<float> cur = z;
  for (int attempt = 0; attempt <= cfg.max_redraws; ++attempt) {
    auto cr = detail::make_creature(cur, cfg.ood);
    auto parts = detail::render_parts(cr, cfg.image_size);
    std::array<std::size_t, 6> counts{};
    for (auto v : parts.data) ++counts[detail::fold_class(v, cfg.num_classes)];
    bool ok = true;
    for (std::size_t c = 1; c < cfg.num_classes; ++c) ok = ok && counts[c] >= cfg.min_part_pixels;
    if (ok) return {cr, std::move(parts), cur};
    cur = detail::redraw_latent(z, attempt + 1);
  }
  throw Error("retry_exhausted", "sample_scene: no non-degenerate creature within " +
                                     std::to_string(cfg.max_redraws) + " re-draws");
}

inline LabelMap fold_mask(const LabelMap& parts, std::size_t num_classes) {
  LabelMap m = parts;
  for (auto& v : m.data) v = detail::fold_class(v, num_classes);
  return m;
}

inline GenSample sample_scene(const std::vector<float>& z, const WorldConfig& cfg) {
  cfg.validate();
  if (z.size() != cfg.latent_dim)
    throw ShapeError("sample_scene: latent has " + std::to_string(z.size()) + " entries, expected " +
                     std::to_string(cfg.latent_dim));
  auto scene = build_scene(z, cfg);
  GenSample s;
  s.z = z;
  s.y_star = fold_mask(scene.parts, cfg.num_classes);
  auto img = detail::render_image(scene.creature, scene.parts, cfg, detail::hash_latent(scene.z_used, 1));
  detail::degrade(img, cfg.quality, detail::hash_latent(scene.z_used, 2));
  s.x = detail::quantize_8bit(img);
  s.h = detail::make_features(scene.creature, s.y_star, cfg, detail::hash_latent(scene.z_used, 3));
  return s;
}

// Latent draws for (seed, stream, index); distinct streams never share a draw.
inline std::vector<float> latent(const WorldConfig& cfg, std::uint64_t seed, Stream stream, std::uint64_t index) {
  Rng rng(stream_seed(seed, stream, index));
  std::vector<float> z(cfg.latent_dim);
  for (auto& v : z) v = static_cast<float>(rng.normal());
  return z;
}

// Sequential consumer of one latent stream.
class LatentStream {
 public:
  LatentStream(const WorldConfig& cfg, std::uint64_t seed, Stream id) : cfg_(cfg), seed_(seed), id_(id) {}

  std::vector<float> next() { return latent(cfg_, seed_, id_, index_++); }
  GenSample next_sample() { return sample_scene(next(), cfg_); }

  Stream id() const noexcept { return id_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t consumed() const noexcept { return index_; }

 private:
  WorldConfig cfg_;
  std::uint64_t seed_;
  Stream id_;
  std::uint64_t index_ = 0;
};

inline nlohmann::json describe_world(const WorldConfig& cfg) {
  cfg.validate();
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < cfg.num_classes; ++c) classes.push_back(kClassNames[c]);
  nlohmann::json pyramid = nlohmann::json::array();
  for (auto l : cfg.pyramid_levels) pyramid.push_back({cfg.feature_channels(), l, l});
  nlohmann::json channels = nlohmann::json::array();
  for (std::size_t i = 0; i < cfg.channels_per_level; ++i) channels.push_back("mixed_part_presence_" + std::to_string(i));
  const char* nuisance[4] = {"texture_field", "coord_x", "coord_y", "background_gradient"};
  for (std::size_t i = 0; i < cfg.nuisance_channels; ++i) channels.push_back(nuisance[i]);
  return {{"classes", classes},
          {"image_shape", {3, cfg.image_size, cfg.image_size}},
          {"mask_shape", {cfg.image_size, cfg.image_size}},
          {"pyramid_shapes", pyramid},
          {"feature_channels", channels},
          {"latent_dim", cfg.latent_dim},
          {"z_order", {"eye", "head", "tail", "leg", "body", "background"}},
          {"config", to_json(cfg)},
          {"config_hash", config_hash(cfg)}};
}

}  // namespace gmlabel::world
