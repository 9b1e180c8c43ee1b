#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pfedlvm/tensor.hpp"

namespace pfedlvm {

enum class LayerKind : std::uint8_t { Dense = 0, Conv3x3 = 1, ReLU = 2 };

std::string to_string(LayerKind kind);

/// One layer of a feed-forward chain.
///
/// Dense acts on axis 1 (features for [B,F] input, channels for [B,C,H,W]
/// input, i.e. a 1x1 convolution). Conv3x3 is stride 1 with zero padding 1,
/// so height and width are preserved. ReLU carries no parameters and its
/// fan_in == fan_out.
struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;

  static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::Dense, in, out}; }
  static LayerSpec conv3x3(std::size_t in, std::size_t out) { return {LayerKind::Conv3x3, in, out}; }
  static LayerSpec relu(std::size_t width) { return {LayerKind::ReLU, width, width}; }

  bool has_params() const { return kind != LayerKind::ReLU; }
  Shape weight_shape() const;
  Shape bias_shape() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Weights and biases of a layer chain. Parameter-free layers hold empty
/// tensors so indices line up with `layers`.
struct ModelParams {
  std::vector<LayerSpec> layers;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  bool trainable = true;

  std::size_t parameter_count() const;
  std::size_t num_tensors() const;

  /// Parameter tensors in canonical order: w0, b0, w1, b1, ... (skipping
  /// parameter-free layers).
  std::vector<const Tensor*> parameters() const;
  std::vector<Tensor*> mutable_parameters();

  bool identical(const ModelParams& other) const;
};

/// Uniform(-gain*sqrt(1/fan), +gain*sqrt(1/fan)) weights and biases, where
/// fan is the number of inputs feeding one output unit.
ModelParams init_model(std::vector<LayerSpec> layers, std::uint64_t seed, bool trainable = true, double gain = 1.0);

/// Same layers with all weights and biases set to zero.
ModelParams zero_model(std::vector<LayerSpec> layers, bool trainable = true);

void validate_model(const ModelParams& model);

/// Flat gradient storage mirroring ModelParams::parameters().
struct Gradients {
  std::vector<Tensor> tensors;

  static Gradients zeros_like(const ModelParams& model);
  void add(const Gradients& other);
};

// Single-layer primitives. Backward functions return the gradient with
// respect to the layer input and accumulate into dw/db when provided.
Tensor conv3x3_forward(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor conv3x3_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dw, Tensor* db);
Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor dense_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dw, Tensor* db);
Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& dy);

// Parameter-free resampling used by the compressor and the head.
Tensor avg_pool2(const Tensor& x);
Tensor avg_pool2_backward(const Tensor& dy);
Tensor upsample2_nearest(const Tensor& x);
Tensor upsample2_nearest_backward(const Tensor& dy);

/// Inputs to every layer, kept for the backward pass.
struct Activations {
  std::vector<Tensor> inputs;
};

struct ForwardResult {
  Tensor output;
  Activations cache;  // empty when the model is not trainable
};

/// Applies `model` to `input`. Throws ConfigError naming the first layer
/// whose expected input width disagrees with the incoming tensor.
ForwardResult forward(const ModelParams& model, const Tensor& input);

/// Forward pass without retaining activations.
Tensor infer(const ModelParams& model, const Tensor& input);

struct BackwardResult {
  Gradients grads;
  Tensor input_grad;
};

BackwardResult backward(const ModelParams& model, const Activations& cache, const Tensor& output_grad);

struct LossResult {
  double loss = 0.0;
  Tensor grad;
};

/// Mean squared error over all elements; gradient wrt pred.
LossResult mse_loss(const Tensor& pred, const Tensor& target);

/// Mean pixel-wise softmax cross entropy. logits [B,C,H,W], labels [B,H,W]
/// holding class indices as doubles.
LossResult cross_entropy_loss(const Tensor& logits, const Tensor& labels);

/// Adam hyperparameters; defaults follow the training table used for all
/// experiments.
struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
};

struct AdamState {
  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step_count = 0;

  static AdamState for_model(const ModelParams& model, AdamConfig config = {});
};

/// One bias-corrected Adam step. Weight decay is coupled: lambda*w is added
/// to the gradient before the moment updates.
void adam_step(ModelParams& params, const Gradients& grads, AdamState& state);

/// Payload bytes of `t` on the wire (8-byte little-endian reals).
std::size_t serialized_byte_size(const Tensor& t);

/// Total payload bytes of all parameter tensors.
std::size_t model_byte_size(const ModelParams& model);

/// All parameters flattened into a rank-1 tensor, canonical order.
Tensor flatten_parameters(const ModelParams& model);
void load_flat_parameters(ModelParams& model, const Tensor& flat);

}  // namespace pfedlvm
