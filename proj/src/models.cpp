#include "pfedlvm/models.hpp"

#include <fstream>
#include <iterator>

#include "pfedlvm/bytes.hpp"

namespace pfedlvm {

namespace {

constexpr std::size_t kConv0 = 0, kConv1 = 2;  // compressor layer slots

std::vector<LayerSpec> compressor_layers(const CompressorConfig& c) {
  return {LayerSpec::conv3x3(c.in_channels, c.hidden_channels), LayerSpec::relu(c.hidden_channels),
          LayerSpec::conv3x3(c.hidden_channels, c.feature_channels)};
}

}  // namespace

CompressorModel CompressorModel::create(const CompressorConfig& config, std::uint64_t seed) {
  return {config, init_model(compressor_layers(config), seed)};
}

CompressorModel CompressorModel::zeros(const CompressorConfig& config) {
  return {config, zero_model(compressor_layers(config))};
}

CompressorPass compressor_forward(const CompressorModel& model, const Tensor& batch) {
  const auto& p = model.params;
  if (batch.rank() != 4 || batch.dim(1) != model.config.in_channels) {
    throw ConfigError("compress: expected [B," + std::to_string(model.config.in_channels) + ",H,W] input, got " +
                      shape_str(batch.shape()));
  }
  if (batch.dim(2) % 2 != 0 || batch.dim(3) % 2 != 0) {
    throw ConfigError("compress: spatial dims must be even, got " + shape_str(batch.shape()));
  }
  CompressorPass pass;
  pass.input = batch;
  pass.pre_relu = conv3x3_forward(batch, p.weights[kConv0], p.biases[kConv0]);
  pass.pooled = avg_pool2(relu_forward(pass.pre_relu));
  pass.output = conv3x3_forward(pass.pooled, p.weights[kConv1], p.biases[kConv1]);
  return pass;
}

Gradients compressor_backward(const CompressorModel& model, const CompressorPass& pass, const Tensor& output_grad) {
  const auto& p = model.params;
  Gradients g = Gradients::zeros_like(p);
  // canonical order: w0, b0, w2, b2
  Tensor d_pooled = conv3x3_backward(pass.pooled, p.weights[kConv1], output_grad, &g.tensors[2], &g.tensors[3]);
  Tensor d_pre = relu_backward(pass.pre_relu, avg_pool2_backward(d_pooled));
  conv3x3_backward(pass.input, p.weights[kConv0], d_pre, &g.tensors[0], &g.tensors[1]);
  return g;
}

Tensor compress(const CompressorModel& model, const Tensor& batch) { return compressor_forward(model, batch).output; }

// ---------------------------------------------------------------------------

namespace {

std::vector<LayerSpec> backbone_layers(const BackboneConfig& c) {
  if (c.depth == 0) throw ConfigError("backbone depth must be >= 1");
  std::vector<LayerSpec> layers;
  for (std::size_t i = 0; i < c.depth; ++i) {
    layers.push_back(LayerSpec::conv3x3(c.channels, c.channels));
    layers.push_back(LayerSpec::relu(c.channels));
  }
  return layers;
}

}  // namespace

BackboneModel BackboneModel::create(const BackboneConfig& config, std::uint64_t seed) {
  return {config, init_model(backbone_layers(config), seed, /*trainable=*/false, config.init_gain)};
}

BackboneModel BackboneModel::zeros(const BackboneConfig& config) {
  return {config, zero_model(backbone_layers(config), /*trainable=*/false)};
}

std::vector<Tensor> backbone_hidden(const BackboneModel& model, const Tensor& input) {
  if (input.rank() != 4 || input.dim(1) != model.config.channels) {
    throw ConfigError("backbone expects [B," + std::to_string(model.config.channels) + ",H,W] input, got " +
                      shape_str(input.shape()));
  }
  std::vector<Tensor> hidden;
  hidden.reserve(model.config.depth);
  const Tensor* current = &input;
  for (std::size_t block = 0; block < model.config.depth; ++block) {
    const std::size_t li = 2 * block;
    hidden.push_back(relu_forward(conv3x3_forward(*current, model.params.weights[li], model.params.biases[li])));
    current = &hidden.back();
  }
  return hidden;
}

std::string to_string(LayerSelection sel) {
  switch (sel) {
    case LayerSelection::Last: return "Last";
    case LayerSelection::Middle1: return "Middle1";
    case LayerSelection::AllAvg: return "AllAvg";
    case LayerSelection::Middle4Avg: return "Middle4Avg";
    case LayerSelection::Middle4Concat: return "Middle4Concat";
    case LayerSelection::AllConcat: return "AllConcat";
  }
  return "?";
}

LayerSelection parse_layer_selection(std::string_view name) {
  for (auto sel : kAllSelections) {
    if (to_string(sel) == name) return sel;
  }
  throw ConfigError("unknown layer selection '" + std::string(name) +
                    "' (expected Last, Middle1, AllAvg, Middle4Avg, Middle4Concat or AllConcat)");
}

bool is_concat(LayerSelection sel) {
  return sel == LayerSelection::Middle4Concat || sel == LayerSelection::AllConcat;
}

std::vector<std::size_t> selected_layers(LayerSelection sel, std::size_t depth) {
  if (depth == 0) throw ConfigError("backbone depth must be >= 1");
  std::vector<std::size_t> out;
  switch (sel) {
    case LayerSelection::Last: out = {depth - 1}; break;
    case LayerSelection::Middle1: out = {(depth - 1) / 2}; break;
    case LayerSelection::AllAvg:
    case LayerSelection::AllConcat:
      for (std::size_t i = 0; i < depth; ++i) out.push_back(i);
      break;
    case LayerSelection::Middle4Avg:
    case LayerSelection::Middle4Concat: {
      if (depth < 4) {
        throw ConfigError(to_string(sel) + " requires a backbone depth of at least 4, got " + std::to_string(depth));
      }
      const std::size_t start = (depth - 4) / 2;
      out = {start, start + 1, start + 2, start + 3};
      break;
    }
  }
  return out;
}

std::size_t concat_factor(LayerSelection sel, std::size_t depth) {
  return is_concat(sel) ? selected_layers(sel, depth).size() : 1;
}

Tensor extract_shared(const BackboneModel& backbone, LayerSelection sel, const Tensor& concat_batch) {
  const auto picks = selected_layers(sel, backbone.config.depth);
  const auto hidden = backbone_hidden(backbone, concat_batch);
  std::vector<Tensor> chosen;
  chosen.reserve(picks.size());
  for (auto i : picks) chosen.push_back(hidden[i]);
  if (chosen.size() == 1) return std::move(chosen.front());
  return is_concat(sel) ? concat_channels(chosen) : mean_of(chosen);
}

Tensor compressor_target(const Tensor& shared, LayerSelection sel, std::size_t feature_channels) {
  if (!is_concat(sel)) return shared;
  if (shared.rank() != 4 || feature_channels == 0 || shared.dim(1) % feature_channels != 0) {
    throw ConfigError("compressor_target: shared features " + shape_str(shared.shape()) +
                      " are not a stack of " + std::to_string(feature_channels) + "-channel blocks");
  }
  const std::size_t blocks = shared.dim(1) / feature_channels;
  const std::size_t batch = shared.dim(0), plane = shared.dim(2) * shared.dim(3);
  Tensor out({batch, feature_channels, shared.dim(2), shared.dim(3)});
  const auto count = static_cast<double>(blocks);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < feature_channels; ++c) {
      for (std::size_t s = 0; s < plane; ++s) {
        double acc = 0.0;
        for (std::size_t k = 0; k < blocks; ++k) acc += shared[(n * shared.dim(1) + k * feature_channels + c) * plane + s];
        out[(n * feature_channels + c) * plane + s] = acc / count;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// head layer slots
constexpr std::size_t kBranchA = 0, kBranchB1 = 1, kBranchB2 = 3, kProject = 5;

std::vector<LayerSpec> head_layers(const SegHeadConfig& c) {
  return {LayerSpec::conv3x3(c.in_channels, c.hidden_channels),
          LayerSpec::conv3x3(c.in_channels, c.hidden_channels),
          LayerSpec::relu(c.hidden_channels),
          LayerSpec::conv3x3(c.hidden_channels, c.hidden_channels),
          LayerSpec::relu(c.hidden_channels),
          LayerSpec::dense(c.hidden_channels, c.classes)};
}

}  // namespace

SegHeadModel SegHeadModel::create(const SegHeadConfig& config, std::uint64_t seed) {
  return {config, init_model(head_layers(config), seed)};
}

SegHeadModel SegHeadModel::zeros(const SegHeadConfig& config) { return {config, zero_model(head_layers(config))}; }

HeadPass head_forward(const SegHeadModel& model, const Tensor& shared) {
  const auto& p = model.params;
  if (shared.rank() != 4 || shared.dim(1) != model.config.in_channels) {
    throw ConfigError("head_predict: head configured for " + std::to_string(model.config.in_channels) +
                      " input channels under layer selection " + to_string(model.config.selection) +
                      ", got shared features " + shape_str(shared.shape()));
  }
  HeadPass pass;
  pass.input = shared;
  Tensor a = conv3x3_forward(shared, p.weights[kBranchA], p.biases[kBranchA]);
  pass.branch_inner = conv3x3_forward(shared, p.weights[kBranchB1], p.biases[kBranchB1]);
  Tensor b = conv3x3_forward(relu_forward(pass.branch_inner), p.weights[kBranchB2], p.biases[kBranchB2]);
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] += b[i];
  pass.merged = std::move(a);
  Tensor low = dense_forward(relu_forward(pass.merged), p.weights[kProject], p.biases[kProject]);
  pass.logits = upsample2_nearest(low);
  return pass;
}

Gradients head_backward(const SegHeadModel& model, const HeadPass& pass, const Tensor& logits_grad) {
  const auto& p = model.params;
  Gradients g = Gradients::zeros_like(p);
  // canonical order: A(w,b)=0,1  B1=2,3  B2=4,5  Project=6,7
  Tensor d_low = upsample2_nearest_backward(logits_grad);
  Tensor merged_act = relu_forward(pass.merged);
  Tensor d_act = dense_backward(merged_act, p.weights[kProject], d_low, &g.tensors[6], &g.tensors[7]);
  Tensor d_merged = relu_backward(pass.merged, d_act);
  Tensor inner_act = relu_forward(pass.branch_inner);
  Tensor d_inner_act = conv3x3_backward(inner_act, p.weights[kBranchB2], d_merged, &g.tensors[4], &g.tensors[5]);
  Tensor d_inner = relu_backward(pass.branch_inner, d_inner_act);
  conv3x3_backward(pass.input, p.weights[kBranchB1], d_inner, &g.tensors[2], &g.tensors[3]);
  conv3x3_backward(pass.input, p.weights[kBranchA], d_merged, &g.tensors[0], &g.tensors[1]);
  return g;
}

Tensor head_predict(const SegHeadModel& model, const Tensor& shared) { return head_forward(model, shared).logits; }

Tensor argmax_classes(const Tensor& logits) {
  if (logits.rank() != 4) throw ConfigError("argmax_classes: expected [B,C,H,W], got " + shape_str(logits.shape()));
  const std::size_t batch = logits.dim(0), classes = logits.dim(1), height = logits.dim(2), width = logits.dim(3);
  Tensor out({batch, height, width});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t h = 0; h < height; ++h)
      for (std::size_t w = 0; w < width; ++w) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c) {
          if (logits.at4(n, c, h, w) > logits.at4(n, best, h, w)) best = c;
        }
        out[(n * height + h) * width + w] = static_cast<double>(best);
      }
  return out;
}

// ---------------------------------------------------------------------------

BaselineNet BaselineNet::create(const BaselineConfig& config, std::uint64_t seed) {
  if (config.conv_layers == 0) throw ConfigError("baseline needs at least one conv layer");
  std::vector<LayerSpec> layers;
  std::size_t width = config.in_channels;
  for (std::size_t i = 0; i < config.conv_layers; ++i) {
    layers.push_back(LayerSpec::conv3x3(width, config.hidden_channels));
    layers.push_back(LayerSpec::relu(config.hidden_channels));
    width = config.hidden_channels;
  }
  layers.push_back(LayerSpec::dense(width, config.classes));
  return {config, init_model(std::move(layers), seed)};
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::uint8_t kCheckpointVersion = 1;
}

void write_checkpoint(std::ostream& out, const ModelParams& model) {
  validate_model(model);
  ByteWriter w;
  w.tag("PFCK");
  w.u8(kCheckpointVersion);
  w.u8(model.trainable ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(model.layers.size()));
  for (const auto& spec : model.layers) {
    w.u8(static_cast<std::uint8_t>(spec.kind));
    w.u64(spec.fan_in);
    w.u64(spec.fan_out);
  }
  const Tensor flat = flatten_parameters(model);
  w.u64(flat.numel());
  w.f64s(flat.data());
  const auto& bytes = w.bytes();
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("checkpoint write failed");
}

ModelParams read_checkpoint(std::istream& in) {
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ByteReader r(bytes);
  r.expect_tag("PFCK", "checkpoint");
  if (const auto v = r.u8(); v != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(v));
  }
  const bool trainable = r.u8() != 0;
  const std::uint32_t count = r.u32();
  std::vector<LayerSpec> layers;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto kind = r.u8();
    if (kind > static_cast<std::uint8_t>(LayerKind::ReLU)) throw FormatError("checkpoint: unknown layer kind");
    LayerSpec spec{static_cast<LayerKind>(kind), 0, 0};
    spec.fan_in = r.u64();
    spec.fan_out = r.u64();
    layers.push_back(spec);
  }
  ModelParams model = zero_model(std::move(layers), /*trainable=*/true);
  const std::uint64_t values = r.u64();
  if (values != model.parameter_count()) {
    throw FormatError("checkpoint: layer specs need " + std::to_string(model.parameter_count()) +
                      " values, file holds " + std::to_string(values));
  }
  if (values > 0) load_flat_parameters(model, Tensor({values}, r.f64s(values)));
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  model.trainable = trainable;
  return model;
}

void save_checkpoint(const std::string& path, const ModelParams& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  write_checkpoint(out, model);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return read_checkpoint(in);
}

}  // namespace pfedlvm
