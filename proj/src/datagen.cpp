#include "pfedlvm/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pfedlvm/bytes.hpp"
#include "pfedlvm/rng.hpp"

namespace pfedlvm {

namespace {

constexpr std::uint64_t kPaletteStream = 0x70616c;  // "pal"
constexpr std::uint64_t kVehicleStream = 0x766568;  // "veh"

void check_simplex(const std::vector<double>& w, std::size_t classes, std::size_t vehicle) {
  const std::string who = "scene.class_weights[" + std::to_string(vehicle) + "]";
  if (w.size() != classes) {
    throw ConfigError(who + ": expected " + std::to_string(classes) + " weights, got " + std::to_string(w.size()));
  }
  double sum = 0.0;
  for (double v : w) {
    if (!(v >= 0.0)) throw ConfigError(who + ": weights must be non-negative");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError(who + ": weights must sum to 1");
  if (std::accumulate(w.begin() + 1, w.end(), 0.0) <= 0.0) {
    throw ConfigError(who + ": at least one foreground class needs positive weight");
  }
}

}  // namespace

void SceneConfig::validate(std::size_t vehicles) const {
  if (image_size < 2 || image_size % 2 != 0) throw ConfigError("scene.image_size must be even and >= 2");
  if (class_count < 2) throw ConfigError("scene.class_count must be >= 2 (class 0 is background)");
  if (min_shapes > max_shapes) throw ConfigError("scene.min_shapes must not exceed scene.max_shapes");
  if (!(noise_std >= 0.0)) throw ConfigError("scene.noise_std must be non-negative");
  if (!class_weights.empty()) {
    if (class_weights.size() < vehicles) {
      throw ConfigError("scene.class_weights lists " + std::to_string(class_weights.size()) + " vehicles, need " +
                        std::to_string(vehicles));
    }
    for (std::size_t v = 0; v < class_weights.size(); ++v) check_simplex(class_weights[v], class_count, v);
  }
}

std::vector<double> default_class_weights(std::size_t class_count, std::size_t vehicle_id) {
  const std::size_t fg = class_count - 1;
  std::vector<double> profile(fg);
  double mass = 0.0;
  for (std::size_t k = 0; k < fg; ++k) {
    profile[k] = std::pow(0.5, static_cast<double>(k));
    mass += profile[k];
  }
  std::vector<double> w(class_count, 0.0);
  w[0] = 0.4;
  for (std::size_t k = 0; k < fg; ++k) w[1 + (k + vehicle_id) % fg] = 0.6 * profile[k] / mass;
  return w;
}

std::vector<double> vehicle_class_weights(const SceneConfig& cfg, std::size_t vehicle_id) {
  if (cfg.class_weights.empty()) return default_class_weights(cfg.class_count, vehicle_id);
  return cfg.class_weights.at(vehicle_id);
}

std::vector<std::array<double, 3>> shared_palette(const SceneConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, kPaletteStream));
  std::vector<std::array<double, 3>> colors;
  // Rejection keeps colors at least 0.35 apart (Euclidean) when possible.
  for (std::size_t c = 0; c < cfg.class_count; ++c) {
    std::array<double, 3> pick{};
    for (int attempt = 0; attempt < 200; ++attempt) {
      for (auto& ch : pick) ch = rng.uniform(0.1, 0.9);
      bool far = true;
      for (const auto& other : colors) {
        double d2 = 0.0;
        for (int k = 0; k < 3; ++k) d2 += (pick[k] - other[k]) * (pick[k] - other[k]);
        if (d2 < 0.35 * 0.35) far = false;
      }
      if (far) break;
    }
    colors.push_back(pick);
  }
  return colors;
}

std::array<double, 3> vehicle_color(const SceneConfig& cfg, std::size_t vehicle_id, std::size_t cls) {
  const auto palette = shared_palette(cfg);
  const std::size_t offset = cfg.rotate_palettes ? vehicle_id % cfg.class_count : 0;
  return palette.at((cls + offset) % cfg.class_count);
}

LabeledImage render_scene(const SceneConfig& cfg, std::size_t vehicle_id, const std::vector<SceneShape>& shapes,
                          std::uint64_t noise_seed) {
  const std::size_t size = cfg.image_size;
  LabeledImage item{Tensor({3, size, size}), Tensor({size, size}, 0.0)};
  for (const auto& s : shapes) {
    if (s.cls >= cfg.class_count) throw ConfigError("render_scene: shape class out of range");
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        bool inside = false;
        if (s.kind == SceneShape::Kind::Rect) {
          inside = x >= s.x0 && x < s.x1 && y >= s.y0 && y < s.y1;
        } else {
          const double dx = static_cast<double>(x) + 0.5 - s.cx;
          const double dy = static_cast<double>(y) + 0.5 - s.cy;
          inside = dx * dx + dy * dy <= s.radius * s.radius;
        }
        if (inside) item.mask[y * size + x] = static_cast<double>(s.cls);
      }
    }
  }
  const auto palette = shared_palette(cfg);
  const std::size_t offset = cfg.rotate_palettes ? vehicle_id % cfg.class_count : 0;
  Rng noise(noise_seed);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t p = 0; p < size * size; ++p) {
      const auto cls = static_cast<std::size_t>(item.mask[p]);
      double v = palette[(cls + offset) % cfg.class_count][ch];
      if (cfg.noise_std > 0.0) v += cfg.noise_std * noise.normal();
      item.image[ch * size * size + p] = std::clamp(v, 0.0, 1.0);
    }
  }
  return item;
}

std::vector<LabeledImage> generate_vehicle_dataset(const SceneConfig& cfg, std::size_t vehicle_id, std::size_t count) {
  if (count == 0) throw ConfigError("generate_vehicle_dataset: count must be >= 1");
  cfg.validate(vehicle_id + 1);
  const auto weights = vehicle_class_weights(cfg, vehicle_id);
  std::vector<double> cumulative;
  double fg_mass = 0.0;
  for (std::size_t c = 1; c < cfg.class_count; ++c) {
    fg_mass += weights[c];
    cumulative.push_back(fg_mass);
  }
  Rng rng(derive_seed(cfg.seed, kVehicleStream + vehicle_id));
  const auto size = static_cast<double>(cfg.image_size);
  const std::size_t min_side = std::max<std::size_t>(1, cfg.image_size / 8);
  const std::size_t max_side = std::max<std::size_t>(min_side, cfg.image_size / 2);

  std::vector<LabeledImage> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t shape_count = cfg.min_shapes + rng.below(cfg.max_shapes - cfg.min_shapes + 1);
    std::vector<SceneShape> shapes;
    for (std::size_t k = 0; k < shape_count; ++k) {
      SceneShape s;
      const double u = rng.uniform() * fg_mass;
      s.cls = cfg.class_count - 1;
      for (std::size_t c = 0; c < cumulative.size(); ++c) {
        if (u < cumulative[c]) {
          s.cls = c + 1;
          break;
        }
      }
      if (rng.below(2) == 0) {
        s.kind = SceneShape::Kind::Rect;
        const std::size_t w = min_side + rng.below(max_side - min_side + 1);
        const std::size_t h = min_side + rng.below(max_side - min_side + 1);
        s.x0 = rng.below(cfg.image_size - w + 1);
        s.y0 = rng.below(cfg.image_size - h + 1);
        s.x1 = s.x0 + w;
        s.y1 = s.y0 + h;
      } else {
        s.kind = SceneShape::Kind::Disc;
        s.radius = rng.uniform(static_cast<double>(min_side), static_cast<double>(max_side) / 2.0 + 1.0);
        s.cx = rng.uniform(0.0, size);
        s.cy = rng.uniform(0.0, size);
      }
      shapes.push_back(s);
    }
    const std::uint64_t noise_seed = derive_seed(derive_seed(cfg.seed, kVehicleStream + vehicle_id), n + 1);
    out.push_back(render_scene(cfg, vehicle_id, shapes, noise_seed));
  }
  return out;
}

std::vector<std::size_t> partition_counts(std::size_t total, const std::vector<double>& proportions) {
  if (proportions.empty()) throw ConfigError("partition_counts: empty proportions");
  double sum = 0.0;
  for (double p : proportions) {
    if (!(p >= 0.0)) throw ConfigError("partition_counts: proportions must be non-negative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("partition_counts: proportions must sum to 1");
  std::vector<std::size_t> counts(proportions.size());
  std::vector<double> remainders(proportions.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < proportions.size(); ++i) {
    const double exact = proportions[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    remainders[i] = exact - std::floor(exact);
    assigned += counts[i];
  }
  std::vector<std::size_t> order(proportions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) counts[order[k % order.size()]] += 1;
  return counts;
}

Tensor stack_images(const std::vector<LabeledImage>& items) {
  if (items.empty()) throw ConfigError("stack_images: empty batch");
  const Shape& s = items.front().image.shape();
  Tensor out({items.size(), s[0], s[1], s[2]});
  auto dst = out.storage().begin();
  for (const auto& it : items) {
    require_same_shape(items.front().image, it.image, "stack_images");
    dst = std::copy(it.image.storage().begin(), it.image.storage().end(), dst);
  }
  return out;
}

Tensor stack_masks(const std::vector<LabeledImage>& items) {
  if (items.empty()) throw ConfigError("stack_masks: empty batch");
  const Shape& s = items.front().mask.shape();
  Tensor out({items.size(), s[0], s[1]});
  auto dst = out.storage().begin();
  for (const auto& it : items) {
    require_same_shape(items.front().mask, it.mask, "stack_masks");
    dst = std::copy(it.mask.storage().begin(), it.mask.storage().end(), dst);
  }
  return out;
}

void save_dataset(const std::string& path, const std::vector<LabeledImage>& items) {
  if (items.empty()) throw ConfigError("save_dataset: empty dataset");
  ByteWriter w;
  w.tag("PFDS");
  w.u8(1);
  const std::size_t h = items.front().mask.dim(0), wd = items.front().mask.dim(1);
  w.u64(items.size());
  w.u64(h);
  w.u64(wd);
  for (const auto& it : items) {
    w.f64s(it.image.data());
    w.f64s(it.mask.data());
  }
  write_file_bytes(path, w.bytes());
}

std::vector<LabeledImage> load_dataset(const std::string& path) {
  const Bytes bytes = read_file_bytes(path);
  ByteReader r(bytes);
  r.expect_tag("PFDS", "dataset");
  if (r.u8() != 1) throw FormatError("dataset: unsupported version");
  const std::uint64_t count = r.u64(), h = r.u64(), w = r.u64();
  if (count == 0 || h == 0 || w == 0) throw FormatError("dataset: empty header");
  std::vector<LabeledImage> items;
  for (std::uint64_t n = 0; n < count; ++n) {
    LabeledImage it{Tensor({3, h, w}, r.f64s(3 * h * w)), Tensor({h, w}, r.f64s(h * w))};
    items.push_back(std::move(it));
  }
  if (r.remaining() != 0) throw FormatError("dataset: trailing bytes");
  return items;
}

}  // namespace pfedlvm
