#include "pfedlvm/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "pfedlvm/parallel.hpp"
#include "pfedlvm/rng.hpp"

namespace pfedlvm {

void FLConfig::validate() const {
  if (sigma == 0) throw ConfigError("fl: sigma must be at least 1");
  if (epochs == 0) throw ConfigError("fl: N_b (epochs) must be at least 1");
  if (batch_size == 0) throw ConfigError("fl: batch_size must be positive");
  if (!(mu >= 0.0) || !std::isfinite(mu)) throw ConfigError("fl: mu must be a finite non-negative number");
}

void add_proximal_gradient(Gradients& grads, const ModelParams& local, const ModelParams& global, double mu) {
  if (mu == 0.0) return;
  const auto lp = local.parameters();
  const auto gp = global.parameters();
  if (lp.size() != gp.size() || lp.size() != grads.tensors.size()) {
    throw ContractError("add_proximal_gradient: parameter structure mismatch");
  }
  for (std::size_t t = 0; t < lp.size(); ++t) {
    require_same_shape(*lp[t], *gp[t], "add_proximal_gradient");
    auto g = grads.tensors[t].data();
    const auto w = lp[t]->data();
    const auto w0 = gp[t]->data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += mu * (w[i] - w0[i]);
  }
}

double local_update(BaselineNet& model, AdamState& opt, VehicleState& data, std::size_t steps, std::size_t batch_size,
                    double mu, const ModelParams* global) {
  if (mu > 0.0 && global == nullptr) throw ContractError("local_update: FedProx needs the global model");
  double total = 0.0;
  for (std::size_t s = 0; s < steps; ++s) {
    const Batch batch = next_batch(data, batch_size);
    const ForwardResult fw = forward(model.params, batch.images);
    const LossResult ce = cross_entropy_loss(fw.output, batch.labels);
    if (!std::isfinite(ce.loss)) {
      throw NumericError("local_update: non-finite loss on vehicle " + std::to_string(data.vehicle_id));
    }
    BackwardResult bw = backward(model.params, fw.cache, ce.grad);
    if (mu > 0.0) add_proximal_gradient(bw.grads, model.params, *global, mu);
    adam_step(model.params, bw.grads, opt);
    total += ce.loss;
  }
  return steps ? total / static_cast<double>(steps) : 0.0;
}

ModelParams aggregate(const std::vector<const ModelParams*>& models, const std::vector<double>& weights) {
  if (models.empty()) throw ConfigError("aggregate: no models");
  if (weights.size() != models.size()) throw ConfigError("aggregate: one weight per model required");
  const ModelParams& first = *models.front();
  for (std::size_t k = 1; k < models.size(); ++k) {
    if (models[k]->layers != first.layers) {
      throw ContractError("aggregate: model " + std::to_string(k) + " has a different architecture");
    }
  }
  ModelParams out = first;
  auto dst = out.mutable_parameters();
  std::vector<std::vector<const Tensor*>> src;
  for (auto* m : models) src.push_back(m->parameters());
  for (std::size_t t = 0; t < dst.size(); ++t) {
    auto d = dst[t]->data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double v0 = (*src[0][t])[i];
      bool same = true;
      double acc = 0.0;
      for (std::size_t k = 0; k < models.size(); ++k) {
        const double v = (*src[k][t])[i];
        same = same && v == v0;
        acc += weights[k] * v;
      }
      d[i] = same ? v0 : acc;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::uint64_t kGlobalStream = 0xf1;
}

FedBaseline::FedBaseline(const FLConfig& config, std::vector<std::vector<LabeledImage>> datasets)
    : config_(config), log_(std::make_unique<MessageLog>(config.keep_message_bytes)) {
  config_.validate();
  if (datasets.empty()) throw ConfigError("fl: vehicle count must be at least 1");
  global_ = BaselineNet::create(config.model, derive_seed(config.seed, kGlobalStream));

  std::size_t total = 0;
  for (std::size_t v = 0; v < datasets.size(); ++v) {
    if (datasets[v].empty()) throw ConfigError("fl: vehicle " + std::to_string(v) + " has an empty dataset");
    total += datasets[v].size();
  }
  if (config.weights.empty()) {
    for (const auto& d : datasets) weights_.push_back(static_cast<double>(d.size()) / static_cast<double>(total));
  } else {
    if (config.weights.size() != datasets.size()) throw ConfigError("fl: one aggregation weight per vehicle required");
    weights_ = config.weights;
  }

  for (std::size_t v = 0; v < datasets.size(); ++v) {
    LocalClient c;
    c.vehicle_id = static_cast<std::uint32_t>(v);
    c.data.vehicle_id = c.vehicle_id;
    c.data.dataset = std::move(datasets[v]);
    c.model = global_;
    c.opt = AdamState::for_model(c.model.params, config.adam);
    clients_.push_back(std::move(c));
  }
  if (config.batch_size > s_max()) {
    throw ConfigError("fl: batch_size " + std::to_string(config.batch_size) + " exceeds the largest dataset (" +
                      std::to_string(s_max()) + ")");
  }
}

std::size_t FedBaseline::s_max() const {
  std::size_t m = 0;
  for (const auto& c : clients_) m = std::max(m, c.data.dataset.size());
  return m;
}

std::size_t FedBaseline::total_rounds() const { return config_.epochs / config_.sigma; }

std::size_t FedBaseline::local_steps() const { return config_.sigma * (s_max() / config_.batch_size); }

BaselineRoundTrace FedBaseline::step() {
  const std::uint64_t round = next_round_++;
  const std::size_t n = clients_.size();
  BaselineRoundTrace trace;
  trace.round_index = round;
  trace.train_loss.assign(n, 0.0);

  const Tensor global_flat = flatten_parameters(global_.params);
  std::vector<Message> downs;
  for (const auto& c : clients_) {
    downs.push_back(make_message(MessageKind::ParameterDown, round, c.vehicle_id, global_flat, Provenance::Parameter));
    trace.downloaded_bytes += downs.back().payload_bytes;
    log_->record(downs.back());
  }

  const std::size_t steps = local_steps();
  std::vector<Message> ups(n);
  parallel_for(n, config_.workers, [&](std::size_t i) {
    auto& c = clients_[i];
    load_flat_parameters(c.model.params, downs[i].payload);
    trace.train_loss[i] =
        local_update(c.model, c.opt, c.data, steps, config_.batch_size, config_.mu, &global_.params);
    ups[i] = make_message(MessageKind::ParameterUp, round, c.vehicle_id, flatten_parameters(c.model.params),
                          Provenance::Parameter);
  });

  std::vector<BaselineNet> received(n);
  std::vector<const ModelParams*> ptrs;
  for (std::size_t i = 0; i < n; ++i) {
    trace.uploaded_bytes += ups[i].payload_bytes;
    log_->record(ups[i]);
    received[i] = global_;
    load_flat_parameters(received[i].params, ups[i].payload);
    ptrs.push_back(&received[i].params);
  }
  global_.params = aggregate(ptrs, weights_);
  return trace;
}

std::vector<BaselineRoundTrace> FedBaseline::run_training() {
  std::vector<BaselineRoundTrace> traces;
  const std::size_t rounds = total_rounds();
  for (std::size_t r = 0; r < rounds; ++r) traces.push_back(step());
  return traces;
}

Tensor FedBaseline::predict(const Tensor& images) const { return argmax_classes(infer(global_.params, images)); }

}  // namespace pfedlvm
