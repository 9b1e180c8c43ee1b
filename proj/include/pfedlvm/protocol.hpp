#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "pfedlvm/commcost.hpp"
#include "pfedlvm/datagen.hpp"
#include "pfedlvm/models.hpp"
#include "pfedlvm/wire.hpp"

namespace pfedlvm {

struct Batch {
  Tensor images;  // [B,3,H,W]
  Tensor labels;  // [B,H,W]
  std::vector<std::size_t> indices;
};

struct VehicleState {
  std::uint32_t vehicle_id = 0;
  std::vector<LabeledImage> dataset;
  CompressorModel compressor;
  AdamState compressor_opt;
  SegHeadModel head;
  AdamState head_opt;
  std::size_t cursor = 0;
};

/// B_s consecutive samples from the cursor, wrapping modulo the dataset
/// size; the cursor advances by B_s (mod size).
Batch next_batch(VehicleState& v, std::size_t batch_size);

struct ServerState {
  BackboneModel backbone;
  LayerSelection selection = LayerSelection::Middle4Concat;
  std::uint64_t round_index = 0;
  std::map<std::uint32_t, Message> pending;  // uploads of round_index, keyed by vehicle
};

/// Accepts one upload. Rejects messages of the wrong kind or round and
/// duplicate senders.
void server_receive(ServerState& server, Message upload);

/// Barrier + extraction: requires one upload from each of `vehicle_ids`,
/// concatenates them along the batch axis in the given order, runs the
/// backbone, and returns one SharedFeatures message per vehicle (its own
/// slice, or the whole tensor when `broadcast_full`). Clears `pending`.
std::vector<Message> server_extract(ServerState& server, const std::vector<std::uint32_t>& vehicle_ids,
                                    bool broadcast_full);

struct RoundOptions {
  std::size_t batch_size = 8;
  std::size_t workers = 1;
  bool broadcast_full = false;
  std::optional<TimeParams> time_model;
};

struct RoundTrace {
  std::uint64_t round_index = 0;
  std::vector<double> compressor_loss;  // by vehicle id
  std::vector<double> head_loss;
  std::size_t uploaded_bytes = 0;
  std::size_t downloaded_bytes = 0;
  std::size_t messages = 0;
  double modeled_time = 0.0;  // event-simulated t_b, 0 without a time model

  friend bool operator==(const RoundTrace&, const RoundTrace&) = default;
};

/// Feature bytes held at one time, as observed while a round executes.
struct RetentionStats {
  std::size_t vehicle_peak = 0;  // compressed features held by vehicles awaiting F_shd
  std::size_t server_peak = 0;   // uploads buffered at the barrier
};

/// Runs one exchange point for all vehicles. Vehicles must be sorted by id.
RoundTrace run_round(ServerState& server, std::vector<VehicleState>& vehicles, std::uint64_t round_index,
                     const RoundOptions& options, MessageLog& log, RetentionStats* retention = nullptr);

// ---------------------------------------------------------------------------

struct ProtocolConfig {
  std::size_t vehicles = 3;
  std::size_t batch_size = 8;
  std::size_t epochs = 30;  // N_b: passes over the largest dataset
  LayerSelection selection = LayerSelection::Middle4Concat;
  CompressorConfig compressor;
  BackboneConfig backbone;
  std::size_t head_hidden = 16;
  std::size_t classes = 4;
  AdamConfig adam;
  bool broadcast_full = false;
  std::size_t workers = 1;
  std::uint64_t seed = 1;
  std::optional<TimeParams> time_model;
  bool keep_message_bytes = false;
};

/// The federation: one server and |V| vehicles with their own datasets.
class PfedSimulation {
 public:
  PfedSimulation(const ProtocolConfig& config, std::vector<std::vector<LabeledImage>> datasets);

  /// Largest local dataset size.
  std::size_t s_max() const;
  /// N_b * floor(S_max / B_s).
  std::size_t total_rounds() const;

  RoundTrace step();
  std::vector<RoundTrace> run(std::size_t rounds);
  std::vector<RoundTrace> run_training();

  std::uint64_t rounds_done() const { return next_round_; }
  const std::vector<VehicleState>& vehicles() const { return vehicles_; }
  const ServerState& server() const { return server_; }
  const MessageLog& log() const { return *log_; }
  const RetentionStats& retention() const { return retention_; }
  const ProtocolConfig& config() const { return config_; }

  /// Per-vehicle personalized class masks [B,H,W] for raw images.
  Tensor predict(std::size_t vehicle, const Tensor& images) const;

  /// Bytes of one vehicle's upload for one mini-batch.
  std::size_t upload_feature_bytes() const;
  /// Bytes of one vehicle's download for one mini-batch.
  std::size_t download_feature_bytes() const;

 private:
  ProtocolConfig config_;
  ServerState server_;
  std::vector<VehicleState> vehicles_;
  std::unique_ptr<MessageLog> log_;
  RetentionStats retention_;
  std::uint64_t next_round_ = 0;
};

/// Builds the federation from `datasets` and runs N_b * floor(S_max/B_s)
/// rounds.
std::vector<RoundTrace> run_training(const ProtocolConfig& config, std::vector<std::vector<LabeledImage>> datasets);

/// Input channels the head needs under `sel`.
std::size_t head_input_channels(LayerSelection sel, const BackboneConfig& backbone);

}  // namespace pfedlvm
