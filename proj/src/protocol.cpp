#include "pfedlvm/protocol.hpp"

#include <algorithm>
#include <cmath>

#include "pfedlvm/parallel.hpp"
#include "pfedlvm/rng.hpp"

namespace pfedlvm {

Batch next_batch(VehicleState& v, std::size_t batch_size) {
  if (v.dataset.empty()) throw ConfigError("next_batch: vehicle " + std::to_string(v.vehicle_id) + " has no data");
  if (batch_size == 0) throw ConfigError("next_batch: batch size must be positive");
  const std::size_t size = v.dataset.size();
  std::vector<LabeledImage> items;
  Batch batch;
  items.reserve(batch_size);
  for (std::size_t k = 0; k < batch_size; ++k) {
    const std::size_t idx = (v.cursor + k) % size;
    batch.indices.push_back(idx);
    items.push_back(v.dataset[idx]);
  }
  v.cursor = (v.cursor + batch_size) % size;
  batch.images = stack_images(items);
  batch.labels = stack_masks(items);
  return batch;
}

void server_receive(ServerState& server, Message upload) {
  if (upload.kind != MessageKind::CompressedFeatures) {
    throw ContractError("server_receive: expected CompressedFeatures, got " + to_string(upload.kind));
  }
  if (upload.round_index != server.round_index) {
    throw ContractError("server_receive: upload for round " + std::to_string(upload.round_index) +
                        " arrived during round " + std::to_string(server.round_index));
  }
  const auto id = upload.vehicle_id;
  if (!server.pending.emplace(id, std::move(upload)).second) {
    throw ContractError("server_receive: duplicate upload from vehicle " + std::to_string(id));
  }
}

std::vector<Message> server_extract(ServerState& server, const std::vector<std::uint32_t>& vehicle_ids,
                                    bool broadcast_full) {
  if (vehicle_ids.empty()) throw ConfigError("server_extract: no vehicles");
  if (server.pending.size() != vehicle_ids.size()) {
    throw ContractError("server_extract: barrier not reached in round " + std::to_string(server.round_index) + " (" +
                        std::to_string(server.pending.size()) + "/" + std::to_string(vehicle_ids.size()) +
                        " uploads)");
  }
  std::vector<Tensor> parts;
  std::vector<std::size_t> offsets;
  std::size_t rows = 0;
  for (auto id : vehicle_ids) {
    auto it = server.pending.find(id);
    if (it == server.pending.end() || it->second.round_index != server.round_index) {
      throw ContractError("server_extract: missing upload from vehicle " + std::to_string(id) + " for round " +
                          std::to_string(server.round_index));
    }
    offsets.push_back(rows);
    rows += it->second.payload.dim(0);
    parts.push_back(it->second.payload);
  }
  const Tensor concatenated = concat_batch(parts);
  const Tensor shared = extract_shared(server.backbone, server.selection, concatenated);

  std::vector<Message> downloads;
  downloads.reserve(vehicle_ids.size());
  for (std::size_t i = 0; i < vehicle_ids.size(); ++i) {
    Tensor payload = broadcast_full ? shared : slice_batch(shared, offsets[i], offsets[i] + parts[i].dim(0));
    downloads.push_back(make_message(MessageKind::SharedFeatures, server.round_index, vehicle_ids[i],
                                     std::move(payload), Provenance::Feature));
  }
  server.pending.clear();
  return downloads;
}

RoundTrace run_round(ServerState& server, std::vector<VehicleState>& vehicles, std::uint64_t round_index,
                     const RoundOptions& options, MessageLog& log, RetentionStats* retention) {
  if (vehicles.empty()) throw ConfigError("run_round: vehicle count must be at least 1");
  if (!server.pending.empty()) throw ContractError("run_round: server holds uploads from an earlier round");
  for (std::size_t i = 1; i < vehicles.size(); ++i) {
    if (vehicles[i - 1].vehicle_id >= vehicles[i].vehicle_id) {
      throw ConfigError("run_round: vehicles must be sorted by unique id");
    }
  }
  const std::size_t n = vehicles.size();
  server.round_index = round_index;

  // Vehicle side: compress and upload.
  std::vector<Batch> batches(n);
  std::vector<CompressorPass> passes(n);
  std::vector<Message> uploads(n);
  parallel_for(n, options.workers, [&](std::size_t i) {
    auto& v = vehicles[i];
    batches[i] = next_batch(v, options.batch_size);
    passes[i] = compressor_forward(v.compressor, batches[i].images);
    uploads[i] = make_message(MessageKind::CompressedFeatures, round_index, v.vehicle_id, passes[i].output,
                              Provenance::Feature);
  });

  RoundTrace trace;
  trace.round_index = round_index;
  std::size_t vehicle_held = 0;
  std::vector<std::uint32_t> ids;
  for (std::size_t i = 0; i < n; ++i) {
    trace.uploaded_bytes += uploads[i].payload_bytes;
    vehicle_held += uploads[i].payload_bytes;
    ids.push_back(vehicles[i].vehicle_id);
    log.record(uploads[i]);
    server_receive(server, std::move(uploads[i]));
  }
  std::size_t server_held = 0;
  for (const auto& [id, msg] : server.pending) server_held += msg.payload_bytes;
  if (retention) {
    retention->vehicle_peak = std::max(retention->vehicle_peak, vehicle_held);
    retention->server_peak = std::max(retention->server_peak, server_held);
  }

  // Server side: barrier, concatenation, extraction, redistribution.
  std::vector<Message> downloads = server_extract(server, ids, options.broadcast_full);
  for (const auto& d : downloads) {
    trace.downloaded_bytes += d.payload_bytes;
    log.record(d);
  }
  trace.messages = 2 * n;

  // Vehicle side: personalized updates.
  trace.compressor_loss.assign(n, 0.0);
  trace.head_loss.assign(n, 0.0);
  const LayerSelection sel = server.selection;
  parallel_for(n, options.workers, [&](std::size_t i) {
    auto& v = vehicles[i];
    const Tensor& received = downloads[i].payload;
    const std::size_t rows = passes[i].output.dim(0);
    Tensor own;
    Tensor target_source;
    if (options.broadcast_full) {
      std::vector<Tensor> blocks;
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n; ++k) {
        blocks.push_back(slice_batch(received, offset, offset + rows));
        if (k == i) own = blocks.back();
        offset += rows;
      }
      target_source = mean_of(blocks);
    } else {
      own = received;
      target_source = received;
    }
    const Tensor target = compressor_target(target_source, sel, v.compressor.config.feature_channels);
    const LossResult mse = mse_loss(passes[i].output, target);
    const HeadPass head_pass = head_forward(v.head, own);
    const LossResult ce = cross_entropy_loss(head_pass.logits, batches[i].labels);
    if (!std::isfinite(mse.loss) || !std::isfinite(ce.loss)) {
      throw NumericError("round " + std::to_string(round_index) + ": non-finite loss on vehicle " +
                         std::to_string(v.vehicle_id));
    }
    adam_step(v.compressor.params, compressor_backward(v.compressor, passes[i], mse.grad), v.compressor_opt);
    adam_step(v.head.params, head_backward(v.head, head_pass, ce.grad), v.head_opt);
    trace.compressor_loss[i] = mse.loss;
    trace.head_loss[i] = ce.loss;
  });

  if (options.time_model) trace.modeled_time = simulate_round_time(*options.time_model);
  return trace;
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::uint64_t kBackboneStream = 0xb0b;
constexpr std::uint64_t kCompressorStream = 0xc000;
constexpr std::uint64_t kHeadStream = 0xd000;
}  // namespace

std::size_t head_input_channels(LayerSelection sel, const BackboneConfig& backbone) {
  return backbone.channels * concat_factor(sel, backbone.depth);
}

PfedSimulation::PfedSimulation(const ProtocolConfig& config, std::vector<std::vector<LabeledImage>> datasets)
    : config_(config), log_(std::make_unique<MessageLog>(config.keep_message_bytes)) {
  if (datasets.empty()) throw ConfigError("protocol: vehicle count must be at least 1");
  if (config.batch_size == 0) throw ConfigError("protocol: batch_size must be positive");
  if (config.epochs == 0) throw ConfigError("protocol: N_b (epochs) must be at least 1");
  if (config.compressor.feature_channels != config.backbone.channels) {
    throw ConfigError("protocol: compressor feature channels (" + std::to_string(config.compressor.feature_channels) +
                      ") must equal backbone channels (" + std::to_string(config.backbone.channels) + ")");
  }
  config_.vehicles = datasets.size();
  server_.backbone = BackboneModel::create(config.backbone, derive_seed(config.seed, kBackboneStream));
  server_.selection = config.selection;

  SegHeadConfig head_cfg;
  head_cfg.in_channels = head_input_channels(config.selection, config.backbone);
  head_cfg.hidden_channels = config.head_hidden;
  head_cfg.classes = config.classes;
  head_cfg.selection = config.selection;

  for (std::size_t v = 0; v < datasets.size(); ++v) {
    if (datasets[v].empty()) throw ConfigError("protocol: vehicle " + std::to_string(v) + " has an empty dataset");
    VehicleState state;
    state.vehicle_id = static_cast<std::uint32_t>(v);
    state.dataset = std::move(datasets[v]);
    state.compressor = CompressorModel::create(config.compressor, derive_seed(config.seed, kCompressorStream + v));
    state.compressor_opt = AdamState::for_model(state.compressor.params, config.adam);
    state.head = SegHeadModel::create(head_cfg, derive_seed(config.seed, kHeadStream + v));
    state.head_opt = AdamState::for_model(state.head.params, config.adam);
    vehicles_.push_back(std::move(state));
  }
  if (config.batch_size > s_max()) {
    throw ConfigError("protocol: batch_size " + std::to_string(config.batch_size) +
                      " exceeds the largest dataset (" + std::to_string(s_max()) + ")");
  }
}

std::size_t PfedSimulation::s_max() const {
  std::size_t m = 0;
  for (const auto& v : vehicles_) m = std::max(m, v.dataset.size());
  return m;
}

std::size_t PfedSimulation::total_rounds() const { return config_.epochs * (s_max() / config_.batch_size); }

RoundTrace PfedSimulation::step() {
  RoundOptions opts;
  opts.batch_size = config_.batch_size;
  opts.workers = config_.workers;
  opts.broadcast_full = config_.broadcast_full;
  opts.time_model = config_.time_model;
  return run_round(server_, vehicles_, next_round_++, opts, *log_, &retention_);
}

std::vector<RoundTrace> PfedSimulation::run(std::size_t rounds) {
  std::vector<RoundTrace> traces;
  traces.reserve(rounds);
  for (std::size_t r = 0; r < rounds; ++r) traces.push_back(step());
  return traces;
}

std::vector<RoundTrace> PfedSimulation::run_training() { return run(total_rounds()); }

Tensor PfedSimulation::predict(std::size_t vehicle, const Tensor& images) const {
  const auto& v = vehicles_.at(vehicle);
  const Tensor features = compress(v.compressor, images);
  return argmax_classes(head_predict(v.head, extract_shared(server_.backbone, server_.selection, features)));
}

std::size_t PfedSimulation::upload_feature_bytes() const {
  const auto& c = config_.compressor;
  const auto& img = vehicles_.front().dataset.front().image;
  return config_.batch_size * c.feature_channels * (img.dim(1) / 2) * (img.dim(2) / 2) * sizeof(double);
}

std::size_t PfedSimulation::download_feature_bytes() const {
  const std::size_t per_vehicle = upload_feature_bytes() * concat_factor(config_.selection, config_.backbone.depth);
  return config_.broadcast_full ? per_vehicle * vehicles_.size() : per_vehicle;
}

std::vector<RoundTrace> run_training(const ProtocolConfig& config, std::vector<std::vector<LabeledImage>> datasets) {
  PfedSimulation sim(config, std::move(datasets));
  return sim.run_training();
}

}  // namespace pfedlvm
