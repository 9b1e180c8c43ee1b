#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "pfedlvm/nn.hpp"

namespace pfedlvm {

// ---------------------------------------------------------------------------
// Feature compressor: Conv3x3 -> ReLU -> 2x2 average pool -> Conv3x3.
// [B,3,H,W] -> [B,F,H/2,W/2].

struct CompressorConfig {
  std::size_t in_channels = 3;
  std::size_t hidden_channels = 8;
  std::size_t feature_channels = 8;
};

struct CompressorModel {
  CompressorConfig config;
  ModelParams params;

  static CompressorModel create(const CompressorConfig& config, std::uint64_t seed);
  static CompressorModel zeros(const CompressorConfig& config);
};

struct CompressorPass {
  Tensor output;
  Tensor input;
  Tensor pre_relu;
  Tensor pooled;
};

CompressorPass compressor_forward(const CompressorModel& model, const Tensor& batch);
Gradients compressor_backward(const CompressorModel& model, const CompressorPass& pass, const Tensor& output_grad);

/// Forward pass only; throws ConfigError on odd spatial dims.
Tensor compress(const CompressorModel& model, const Tensor& batch);

// ---------------------------------------------------------------------------
// Frozen backbone: `depth` shape-preserving Conv3x3+ReLU blocks.

struct BackboneConfig {
  std::size_t channels = 8;
  std::size_t depth = 8;
  double init_gain = 1.0;
};

struct BackboneModel {
  BackboneConfig config;
  ModelParams params;  // trainable == false

  static BackboneModel create(const BackboneConfig& config, std::uint64_t seed);
  static BackboneModel zeros(const BackboneConfig& config);
};

/// Post-ReLU output of every block, first to last.
std::vector<Tensor> backbone_hidden(const BackboneModel& model, const Tensor& input);

enum class LayerSelection : std::uint8_t { Last, Middle1, AllAvg, Middle4Avg, Middle4Concat, AllConcat };

inline constexpr LayerSelection kAllSelections[] = {LayerSelection::Last,          LayerSelection::Middle1,
                                                    LayerSelection::AllAvg,        LayerSelection::Middle4Avg,
                                                    LayerSelection::Middle4Concat, LayerSelection::AllConcat};

std::string to_string(LayerSelection sel);
LayerSelection parse_layer_selection(std::string_view name);

/// Zero-based block indices consumed by `sel` for a backbone of `depth`.
std::vector<std::size_t> selected_layers(LayerSelection sel, std::size_t depth);

bool is_concat(LayerSelection sel);

/// Number of channel blocks stacked by `sel` (1 for non-concat modes).
std::size_t concat_factor(LayerSelection sel, std::size_t depth);

/// Shared features for a concatenated batch. Averaging modes return the mean
/// of the selected blocks; concat modes stack them along channels.
Tensor extract_shared(const BackboneModel& backbone, LayerSelection sel, const Tensor& concat_batch);

/// Compressor-shaped regression target derived from shared features. For
/// concat modes this is the mean over the stacked channel blocks.
Tensor compressor_target(const Tensor& shared, LayerSelection sel, std::size_t feature_channels);

// ---------------------------------------------------------------------------
// Segmentation head: two parallel Conv3x3 branches (one single conv, one
// two-conv stack) summed, ReLU, channel-wise Dense to class logits, then 2x
// nearest upsampling.

struct SegHeadConfig {
  std::size_t in_channels = 32;
  std::size_t hidden_channels = 16;
  std::size_t classes = 4;
  LayerSelection selection = LayerSelection::Middle4Concat;
};

struct SegHeadModel {
  SegHeadConfig config;
  ModelParams params;

  static SegHeadModel create(const SegHeadConfig& config, std::uint64_t seed);
  static SegHeadModel zeros(const SegHeadConfig& config);
};

struct HeadPass {
  Tensor logits;
  Tensor input;
  Tensor branch_inner;  // pre-ReLU output of the first conv in the stacked branch
  Tensor merged;        // pre-ReLU sum of both branches
};

HeadPass head_forward(const SegHeadModel& model, const Tensor& shared);
Gradients head_backward(const SegHeadModel& model, const HeadPass& pass, const Tensor& logits_grad);

/// Logits [B,C,2*Hf,2*Wf]; throws ConfigError naming the active selection on
/// channel mismatch.
Tensor head_predict(const SegHeadModel& model, const Tensor& shared);

/// Per-pixel argmax over classes: [B,C,H,W] -> [B,H,W].
Tensor argmax_classes(const Tensor& logits);

// ---------------------------------------------------------------------------
// Baseline network for parameter-exchanging FL: [B,3,H,W] -> [B,C,H,W].

struct BaselineConfig {
  std::size_t in_channels = 3;
  std::size_t hidden_channels = 24;
  std::size_t conv_layers = 3;
  std::size_t classes = 4;
};

struct BaselineNet {
  BaselineConfig config;
  ModelParams params;

  static BaselineNet create(const BaselineConfig& config, std::uint64_t seed);
};

// ---------------------------------------------------------------------------
// Checkpoints: "PFCK", version byte, trainable byte, u32 layer count,
// per layer (u8 kind, u64 fan_in, u64 fan_out), u64 value count, then all
// parameters as little-endian doubles in canonical order.

void write_checkpoint(std::ostream& out, const ModelParams& model);
ModelParams read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const ModelParams& model);
ModelParams load_checkpoint(const std::string& path);

}  // namespace pfedlvm
