#include "pfedlvm/nn.hpp"

#include <algorithm>
#include <cmath>

#include "pfedlvm/rng.hpp"

namespace pfedlvm {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense: return "Dense";
    case LayerKind::Conv3x3: return "Conv3x3";
    case LayerKind::ReLU: return "ReLU";
  }
  return "?";
}

Shape LayerSpec::weight_shape() const {
  switch (kind) {
    case LayerKind::Dense: return {fan_out, fan_in};
    case LayerKind::Conv3x3: return {fan_out, fan_in, 3, 3};
    case LayerKind::ReLU: return {};
  }
  return {};
}

Shape LayerSpec::bias_shape() const {
  if (kind == LayerKind::ReLU) return {};
  return {fan_out};
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->numel();
  return n;
}

std::size_t ModelParams::num_tensors() const { return parameters().size(); }

std::vector<const Tensor*> ModelParams::parameters() const {
  std::vector<const Tensor*> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].has_params()) continue;
    out.push_back(&weights[i]);
    out.push_back(&biases[i]);
  }
  return out;
}

std::vector<Tensor*> ModelParams::mutable_parameters() {
  if (!trainable) throw ContractError("attempt to obtain mutable parameters of a frozen model");
  std::vector<Tensor*> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!layers[i].has_params()) continue;
    out.push_back(&weights[i]);
    out.push_back(&biases[i]);
  }
  return out;
}

bool ModelParams::identical(const ModelParams& other) const {
  if (layers != other.layers || trainable != other.trainable) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!weights[i].identical(other.weights[i]) || !biases[i].identical(other.biases[i])) return false;
  }
  return true;
}

namespace {

std::size_t units_fan_in(const LayerSpec& spec) {
  return spec.kind == LayerKind::Conv3x3 ? spec.fan_in * 9 : spec.fan_in;
}

void check_layer(const LayerSpec& spec, std::size_t index) {
  if (spec.fan_in == 0 || spec.fan_out == 0) {
    throw ConfigError("layer " + std::to_string(index) + " (" + to_string(spec.kind) + ") has zero width");
  }
  if (spec.kind == LayerKind::ReLU && spec.fan_in != spec.fan_out) {
    throw ConfigError("layer " + std::to_string(index) + " (ReLU) must have fan_in == fan_out");
  }
}

}  // namespace

ModelParams init_model(std::vector<LayerSpec> layers, std::uint64_t seed, bool trainable, double gain) {
  ModelParams model;
  model.layers = std::move(layers);
  model.trainable = trainable;
  Rng rng(seed);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& spec = model.layers[i];
    check_layer(spec, i);
    if (!spec.has_params()) {
      model.weights.emplace_back();
      model.biases.emplace_back();
      continue;
    }
    const double bound = gain * std::sqrt(1.0 / static_cast<double>(units_fan_in(spec)));
    Tensor w(spec.weight_shape());
    for (auto& v : w.data()) v = rng.uniform(-bound, bound);
    Tensor b(spec.bias_shape());
    for (auto& v : b.data()) v = rng.uniform(-bound, bound);
    model.weights.push_back(std::move(w));
    model.biases.push_back(std::move(b));
  }
  return model;
}

ModelParams zero_model(std::vector<LayerSpec> layers, bool trainable) {
  ModelParams model;
  model.layers = std::move(layers);
  model.trainable = trainable;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& spec = model.layers[i];
    check_layer(spec, i);
    if (!spec.has_params()) {
      model.weights.emplace_back();
      model.biases.emplace_back();
    } else {
      model.weights.emplace_back(spec.weight_shape());
      model.biases.emplace_back(spec.bias_shape());
    }
  }
  return model;
}

void validate_model(const ModelParams& model) {
  if (model.weights.size() != model.layers.size() || model.biases.size() != model.layers.size()) {
    throw ConfigError("model has " + std::to_string(model.layers.size()) + " layers but " +
                      std::to_string(model.weights.size()) + " weight tensors");
  }
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& spec = model.layers[i];
    check_layer(spec, i);
    if (!spec.has_params()) continue;
    if (model.weights[i].shape() != spec.weight_shape() || model.biases[i].shape() != spec.bias_shape()) {
      throw ConfigError("layer " + std::to_string(i) + " parameter shape " + shape_str(model.weights[i].shape()) +
                        " inconsistent with " + to_string(spec.kind) + "(" + std::to_string(spec.fan_in) + "->" +
                        std::to_string(spec.fan_out) + ")");
    }
  }
}

Gradients Gradients::zeros_like(const ModelParams& model) {
  Gradients g;
  for (const auto* p : model.parameters()) g.tensors.emplace_back(p->shape());
  return g;
}

void Gradients::add(const Gradients& other) {
  if (other.tensors.size() != tensors.size()) throw ConfigError("Gradients::add: tensor count mismatch");
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    require_same_shape(tensors[t], other.tensors[t], "Gradients::add");
    for (std::size_t i = 0; i < tensors[t].numel(); ++i) tensors[t][i] += other.tensors[t][i];
  }
}

// ---------------------------------------------------------------------------
// Conv3x3, stride 1, zero padding 1.

namespace {

// Valid output range [lo, hi) along one axis for kernel offset k in {0,1,2}.
inline void tap_range(std::size_t k, std::size_t len, std::size_t& lo, std::size_t& hi) {
  lo = k == 0 ? 1 : 0;
  hi = k == 2 ? len - 1 : len;
}

}  // namespace

// Loops run per kernel tap over contiguous rows so the inner loop vectorizes.
Tensor conv3x3_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t batch = x.dim(0), cin = x.dim(1), height = x.dim(2), width = x.dim(3);
  const std::size_t cout = w.dim(0), plane = height * width;
  Tensor y({batch, cout, height, width});
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      double* out = &y[(n * cout + o) * plane];
      for (std::size_t p = 0; p < plane; ++p) out[p] = b[o];
      for (std::size_t i = 0; i < cin; ++i) {
        const double* in = &x[(n * cin + i) * plane];
        const double* k = &w[(o * cin + i) * 9];
        for (std::size_t kh = 0; kh < 3; ++kh) {
          std::size_t h0, h1;
          tap_range(kh, height, h0, h1);
          for (std::size_t kw = 0; kw < 3; ++kw) {
            std::size_t c0, c1;
            tap_range(kw, width, c0, c1);
            const double wk = k[kh * 3 + kw];
            for (std::size_t h = h0; h < h1; ++h) {
              double* orow = out + h * width;
              const double* irow = in + static_cast<std::ptrdiff_t>((h + kh - 1) * width + kw) - 1;
              for (std::size_t c = c0; c < c1; ++c) orow[c] += wk * irow[c];
            }
          }
        }
      }
    }
  }
  return y;
}

Tensor conv3x3_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dw, Tensor* db) {
  const std::size_t batch = x.dim(0), cin = x.dim(1), height = x.dim(2), width = x.dim(3);
  const std::size_t cout = w.dim(0), plane = height * width;
  Tensor dx(x.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      const double* g = &dy[(n * cout + o) * plane];
      if (db) {
        double acc = 0.0;
        for (std::size_t p = 0; p < plane; ++p) acc += g[p];
        (*db)[o] += acc;
      }
      for (std::size_t i = 0; i < cin; ++i) {
        const double* in = &x[(n * cin + i) * plane];
        double* gin = &dx[(n * cin + i) * plane];
        const double* k = &w[(o * cin + i) * 9];
        for (std::size_t kh = 0; kh < 3; ++kh) {
          std::size_t h0, h1;
          tap_range(kh, height, h0, h1);
          for (std::size_t kw = 0; kw < 3; ++kw) {
            std::size_t c0, c1;
            tap_range(kw, width, c0, c1);
            const double wk = k[kh * 3 + kw];
            double acc = 0.0;
            for (std::size_t h = h0; h < h1; ++h) {
              const double* grow = g + h * width;
              const std::ptrdiff_t off = static_cast<std::ptrdiff_t>((h + kh - 1) * width + kw) - 1;
              double* xrow = gin + off;
              const double* irow = in + off;
              for (std::size_t c = c0; c < c1; ++c) {
                xrow[c] += wk * grow[c];
                acc += irow[c] * grow[c];
              }
            }
            if (dw) (*dw)[(o * cin + i) * 9 + kh * 3 + kw] += acc;
          }
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Dense over axis 1.

namespace {

std::size_t trailing(const Tensor& x) { return x.rank() <= 2 ? 1 : x.numel() / (x.dim(0) * x.dim(1)); }

}  // namespace

Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t batch = x.dim(0), cin = x.dim(1), cout = w.dim(0), spatial = trailing(x);
  Shape shape = x.shape();
  shape[1] = cout;
  Tensor y(shape);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      double* out = &y[(n * cout + o) * spatial];
      for (std::size_t s = 0; s < spatial; ++s) out[s] = b[o];
      for (std::size_t i = 0; i < cin; ++i) {
        const double wi = w[o * cin + i];
        const double* in = &x[(n * cin + i) * spatial];
        for (std::size_t s = 0; s < spatial; ++s) out[s] += wi * in[s];
      }
    }
  }
  return y;
}

Tensor dense_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dw, Tensor* db) {
  const std::size_t batch = x.dim(0), cin = x.dim(1), cout = w.dim(0), spatial = trailing(x);
  Tensor dx(x.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      const double* g = &dy[(n * cout + o) * spatial];
      if (db) {
        for (std::size_t s = 0; s < spatial; ++s) (*db)[o] += g[s];
      }
      for (std::size_t i = 0; i < cin; ++i) {
        const double wi = w[o * cin + i];
        const double* in = &x[(n * cin + i) * spatial];
        double* gin = &dx[(n * cin + i) * spatial];
        double acc = 0.0;
        for (std::size_t s = 0; s < spatial; ++s) {
          gin[s] += wi * g[s];
          acc += in[s] * g[s];
        }
        if (dw) (*dw)[o * cin + i] += acc;
      }
    }
  }
  return dx;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.data()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.numel(); ++i) {
    if (!(x[i] > 0.0)) dx[i] = 0.0;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// 2x resampling on NCHW tensors.

Tensor avg_pool2(const Tensor& x) {
  if (x.rank() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
    throw ConfigError("avg_pool2 needs NCHW input with even spatial dims, got " + shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0), ch = x.dim(1), oh = x.dim(2) / 2, ow = x.dim(3) / 2;
  Tensor y({batch, ch, oh, ow});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t h = 0; h < oh; ++h)
        for (std::size_t w = 0; w < ow; ++w)
          y.at4(n, c, h, w) = 0.25 * (x.at4(n, c, 2 * h, 2 * w) + x.at4(n, c, 2 * h, 2 * w + 1) +
                                      x.at4(n, c, 2 * h + 1, 2 * w) + x.at4(n, c, 2 * h + 1, 2 * w + 1));
  return y;
}

Tensor avg_pool2_backward(const Tensor& dy) {
  const std::size_t batch = dy.dim(0), ch = dy.dim(1), oh = dy.dim(2), ow = dy.dim(3);
  Tensor dx({batch, ch, oh * 2, ow * 2});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t h = 0; h < oh * 2; ++h)
        for (std::size_t w = 0; w < ow * 2; ++w) dx.at4(n, c, h, w) = 0.25 * dy.at4(n, c, h / 2, w / 2);
  return dx;
}

Tensor upsample2_nearest(const Tensor& x) {
  if (x.rank() != 4) throw ConfigError("upsample2_nearest needs NCHW input, got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), ch = x.dim(1), oh = x.dim(2) * 2, ow = x.dim(3) * 2;
  Tensor y({batch, ch, oh, ow});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t h = 0; h < oh; ++h)
        for (std::size_t w = 0; w < ow; ++w) y.at4(n, c, h, w) = x.at4(n, c, h / 2, w / 2);
  return y;
}

Tensor upsample2_nearest_backward(const Tensor& dy) {
  if (dy.rank() != 4 || dy.dim(2) % 2 != 0 || dy.dim(3) % 2 != 0) {
    throw ConfigError("upsample2_nearest_backward needs even spatial dims, got " + shape_str(dy.shape()));
  }
  const std::size_t batch = dy.dim(0), ch = dy.dim(1), oh = dy.dim(2) / 2, ow = dy.dim(3) / 2;
  Tensor dx({batch, ch, oh, ow});
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t h = 0; h < oh; ++h)
        for (std::size_t w = 0; w < ow; ++w)
          dx.at4(n, c, h, w) = dy.at4(n, c, 2 * h, 2 * w) + dy.at4(n, c, 2 * h, 2 * w + 1) +
                               dy.at4(n, c, 2 * h + 1, 2 * w) + dy.at4(n, c, 2 * h + 1, 2 * w + 1);
  return dx;
}

// ---------------------------------------------------------------------------
// Chains.

namespace {

Tensor apply_layer(const ModelParams& model, std::size_t index, const Tensor& x) {
  const auto& spec = model.layers[index];
  if (x.rank() < 2 || x.dim(1) != spec.fan_in) {
    throw ConfigError("layer " + std::to_string(index) + " (" + to_string(spec.kind) + ") expects " +
                      std::to_string(spec.fan_in) + " input channels, got shape " + shape_str(x.shape()));
  }
  switch (spec.kind) {
    case LayerKind::Dense: return dense_forward(x, model.weights[index], model.biases[index]);
    case LayerKind::Conv3x3:
      if (x.rank() != 4) {
        throw ConfigError("layer " + std::to_string(index) + " (Conv3x3) needs NCHW input, got shape " +
                          shape_str(x.shape()));
      }
      return conv3x3_forward(x, model.weights[index], model.biases[index]);
    case LayerKind::ReLU: return relu_forward(x);
  }
  return x;
}

}  // namespace

ForwardResult forward(const ModelParams& model, const Tensor& input) {
  validate_model(model);
  ForwardResult result;
  Tensor current = input;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    Tensor next = apply_layer(model, i, current);
    if (model.trainable) result.cache.inputs.push_back(std::move(current));
    current = std::move(next);
  }
  result.output = std::move(current);
  return result;
}

Tensor infer(const ModelParams& model, const Tensor& input) {
  validate_model(model);
  Tensor current = input;
  for (std::size_t i = 0; i < model.layers.size(); ++i) current = apply_layer(model, i, current);
  return current;
}

BackwardResult backward(const ModelParams& model, const Activations& cache, const Tensor& output_grad) {
  if (cache.inputs.size() != model.layers.size()) {
    throw ContractError("backward requires activations retained by a trainable forward pass");
  }
  BackwardResult result;
  result.grads = Gradients::zeros_like(model);
  // Map layer index -> position of its weight gradient in the flat list.
  std::vector<std::size_t> slot(model.layers.size(), 0);
  for (std::size_t i = 0, k = 0; i < model.layers.size(); ++i) {
    if (model.layers[i].has_params()) {
      slot[i] = k;
      k += 2;
    }
  }
  Tensor grad = output_grad;
  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const auto& spec = model.layers[li];
    const Tensor& x = cache.inputs[li];
    switch (spec.kind) {
      case LayerKind::Dense:
        grad = dense_backward(x, model.weights[li], grad, &result.grads.tensors[slot[li]],
                              &result.grads.tensors[slot[li] + 1]);
        break;
      case LayerKind::Conv3x3:
        grad = conv3x3_backward(x, model.weights[li], grad, &result.grads.tensors[slot[li]],
                                &result.grads.tensors[slot[li] + 1]);
        break;
      case LayerKind::ReLU: grad = relu_backward(x, grad); break;
    }
  }
  result.input_grad = std::move(grad);
  return result;
}

// ---------------------------------------------------------------------------
// Losses.

LossResult mse_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "mse_loss");
  LossResult r;
  r.grad = Tensor(pred.shape());
  const auto count = static_cast<double>(pred.numel());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = pred[i] - target[i];
    sum += d * d;
    r.grad[i] = 2.0 * d / count;
  }
  r.loss = sum / count;
  return r;
}

LossResult cross_entropy_loss(const Tensor& logits, const Tensor& labels) {
  if (logits.rank() != 4 || labels.rank() != 3 || labels.dim(0) != logits.dim(0) || labels.dim(1) != logits.dim(2) ||
      labels.dim(2) != logits.dim(3)) {
    throw ConfigError("cross_entropy_loss: logits " + shape_str(logits.shape()) + " incompatible with labels " +
                      shape_str(labels.shape()));
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1), height = logits.dim(2), width = logits.dim(3);
  const auto pixels = static_cast<double>(batch * height * width);
  LossResult r;
  r.grad = Tensor(logits.shape());
  double total = 0.0;
  std::vector<double> shifted(classes);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t h = 0; h < height; ++h) {
      for (std::size_t w = 0; w < width; ++w) {
        const double raw = labels[(n * height + h) * width + w];
        const auto label = static_cast<long>(raw);
        if (raw != static_cast<double>(label) || label < 0 || label >= static_cast<long>(classes)) {
          throw ConfigError("cross_entropy_loss: label " + std::to_string(raw) + " out of range [0," +
                            std::to_string(classes) + ") at pixel (n=" + std::to_string(n) +
                            ", h=" + std::to_string(h) + ", w=" + std::to_string(w) + ")");
        }
        std::size_t top = 0;
        for (std::size_t c = 1; c < classes; ++c) {
          if (logits.at4(n, c, h, w) > logits.at4(n, top, h, w)) top = c;
        }
        const double peak = logits.at4(n, top, h, w);
        // log(sum exp) = log1p(sum over non-max classes) keeps saturated
        // pixels accurate.
        double rest = 0.0;
        for (std::size_t c = 0; c < classes; ++c) {
          shifted[c] = std::exp(logits.at4(n, c, h, w) - peak);
          if (c != top) rest += shifted[c];
        }
        const double log_norm = std::log1p(rest);
        const double denom = 1.0 + rest;
        total += log_norm - (logits.at4(n, static_cast<std::size_t>(label), h, w) - peak);
        for (std::size_t c = 0; c < classes; ++c) {
          const double p = shifted[c] / denom;
          r.grad.at4(n, c, h, w) = (p - (c == static_cast<std::size_t>(label) ? 1.0 : 0.0)) / pixels;
        }
      }
    }
  }
  r.loss = total / pixels;
  return r;
}

// ---------------------------------------------------------------------------
// Adam.

AdamState AdamState::for_model(const ModelParams& model, AdamConfig config) {
  AdamState s;
  s.config = config;
  for (const auto* p : model.parameters()) {
    s.first_moment.emplace_back(p->shape());
    s.second_moment.emplace_back(p->shape());
  }
  return s;
}

void adam_step(ModelParams& params, const Gradients& grads, AdamState& state) {
  if (!params.trainable) throw ContractError("adam_step called on a frozen (non-trainable) model");
  auto tensors = params.mutable_parameters();
  if (grads.tensors.size() != tensors.size() || state.first_moment.size() != tensors.size()) {
    throw ConfigError("adam_step: " + std::to_string(tensors.size()) + " parameter tensors but " +
                      std::to_string(grads.tensors.size()) + " gradients and " +
                      std::to_string(state.first_moment.size()) + " moment slots");
  }
  const auto& cfg = state.config;
  state.step_count += 1;
  const auto t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    Tensor& w = *tensors[k];
    require_same_shape(w, grads.tensors[k], "adam_step");
    Tensor& m = state.first_moment[k];
    Tensor& v = state.second_moment[k];
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const double g = grads.tensors[k][i] + cfg.weight_decay * w[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      w[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------

std::size_t serialized_byte_size(const Tensor& t) { return t.numel() * sizeof(double); }

std::size_t model_byte_size(const ModelParams& model) { return model.parameter_count() * sizeof(double); }

Tensor flatten_parameters(const ModelParams& model) {
  std::vector<double> flat;
  flat.reserve(model.parameter_count());
  for (const auto* p : model.parameters()) flat.insert(flat.end(), p->storage().begin(), p->storage().end());
  const std::size_t n = flat.size();
  return Tensor({n}, std::move(flat));
}

void load_flat_parameters(ModelParams& model, const Tensor& flat) {
  if (flat.numel() != model.parameter_count()) {
    throw ConfigError("load_flat_parameters: expected " + std::to_string(model.parameter_count()) +
                      " values, got " + std::to_string(flat.numel()));
  }
  std::size_t offset = 0;
  for (auto* p : model.mutable_parameters()) {
    std::copy_n(flat.storage().begin() + static_cast<std::ptrdiff_t>(offset), p->numel(), p->storage().begin());
    offset += p->numel();
  }
}

}  // namespace pfedlvm
