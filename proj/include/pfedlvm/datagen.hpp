#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pfedlvm/tensor.hpp"

namespace pfedlvm {

/// Synthetic street-scene stand-in. Class 0 is background and fills every
/// pixel not covered by a shape; shapes are axis-aligned rectangles or discs
/// whose classes are drawn from the vehicle's weights over classes 1..C-1.
struct SceneConfig {
  std::size_t image_size = 16;
  std::size_t class_count = 4;
  std::size_t min_shapes = 2;
  std::size_t max_shapes = 5;
  double noise_std = 0.05;
  std::uint64_t seed = 7;
  /// One simplex over C classes per vehicle. Empty selects the built-in
  /// skewed profile (see default_class_weights).
  std::vector<std::vector<double>> class_weights;
  /// Per-vehicle palette offset into the shared color set. true: vehicle v
  /// paints class c with shared color (c + v) mod C, so the same color means
  /// different classes on different vehicles.
  bool rotate_palettes = true;

  void validate(std::size_t vehicles) const;
};

struct LabeledImage {
  Tensor image;  // [3,H,W] in [0,1]
  Tensor mask;   // [H,W] class indices
};

/// Built-in per-vehicle class-frequency profile: background weight 0.4, the
/// remaining mass split geometrically (ratio 1/2) over the foreground classes
/// and rotated by vehicle id.
std::vector<double> default_class_weights(std::size_t class_count, std::size_t vehicle_id);

/// Weights in force for `vehicle_id` (configured or default).
std::vector<double> vehicle_class_weights(const SceneConfig& cfg, std::size_t vehicle_id);

/// Shared seeded color set; entry c is an RGB triple in [0.1, 0.9].
std::vector<std::array<double, 3>> shared_palette(const SceneConfig& cfg);

/// Base color used by `vehicle_id` for class `cls`.
std::array<double, 3> vehicle_color(const SceneConfig& cfg, std::size_t vehicle_id, std::size_t cls);

struct SceneShape {
  enum class Kind : std::uint8_t { Rect, Disc } kind = Kind::Rect;
  std::size_t cls = 0;
  // Rect covers rows [y0,y1) and columns [x0,x1). Disc covers pixels whose
  // centers lie within `radius` of (cy, cx).
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double cx = 0.0, cy = 0.0, radius = 0.0;
};

/// Paints background then `shapes` in order, adds N(0, noise_std) per
/// channel from `noise_seed`, clamps to [0,1].
LabeledImage render_scene(const SceneConfig& cfg, std::size_t vehicle_id, const std::vector<SceneShape>& shapes,
                          std::uint64_t noise_seed);

/// Deterministic in (cfg.seed, vehicle_id, count).
std::vector<LabeledImage> generate_vehicle_dataset(const SceneConfig& cfg, std::size_t vehicle_id, std::size_t count);

/// Splits `total` by largest-remainder rounding. Ties go to the lower index.
std::vector<std::size_t> partition_counts(std::size_t total, const std::vector<double>& proportions);

/// Stacks images into [B,3,H,W] and masks into [B,H,W].
Tensor stack_images(const std::vector<LabeledImage>& items);
Tensor stack_masks(const std::vector<LabeledImage>& items);

/// Binary dump: "PFDS", version byte, u64 count, u64 height, u64 width, then
/// per item 3*H*W image reals followed by H*W mask reals (little-endian).
void save_dataset(const std::string& path, const std::vector<LabeledImage>& items);
std::vector<LabeledImage> load_dataset(const std::string& path);

}  // namespace pfedlvm
