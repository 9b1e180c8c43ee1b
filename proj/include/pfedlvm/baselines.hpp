#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "pfedlvm/datagen.hpp"
#include "pfedlvm/models.hpp"
#include "pfedlvm/protocol.hpp"
#include "pfedlvm/wire.hpp"

namespace pfedlvm {

/// Parameter-exchanging FL (FedAvg when mu == 0, FedProx otherwise).
struct FLConfig {
  std::size_t sigma = 2;       // passes over the largest dataset between aggregations
  double mu = 0.0;             // proximal coefficient
  std::size_t epochs = 30;     // N_b
  std::size_t batch_size = 8;
  std::vector<double> weights;  // empty: |D_v| / |D|
  BaselineConfig model;
  AdamConfig adam;
  std::size_t workers = 1;
  std::uint64_t seed = 1;
  bool keep_message_bytes = false;

  void validate() const;
};

/// Adds mu * (w - w_global) to every parameter gradient.
void add_proximal_gradient(Gradients& grads, const ModelParams& local, const ModelParams& global, double mu);

struct LocalClient {
  std::uint32_t vehicle_id = 0;
  VehicleState data;  // only dataset and cursor are used
  BaselineNet model;
  AdamState opt;
};

/// `steps` Adam steps of pixel cross-entropy on consecutive mini-batches.
/// With mu > 0 the proximal pull toward `global` is added to each gradient.
/// Returns the mean training loss over the steps.
double local_update(BaselineNet& model, AdamState& opt, VehicleState& data, std::size_t steps, std::size_t batch_size,
                    double mu, const ModelParams* global);

/// Elementwise weighted mean. Elements equal across all models are copied
/// through unchanged, so aggregating identical models is exact.
ModelParams aggregate(const std::vector<const ModelParams*>& models, const std::vector<double>& weights);

struct BaselineRoundTrace {
  std::uint64_t round_index = 0;
  std::vector<double> train_loss;  // by vehicle
  std::size_t uploaded_bytes = 0;
  std::size_t downloaded_bytes = 0;

  friend bool operator==(const BaselineRoundTrace&, const BaselineRoundTrace&) = default;
};

class FedBaseline {
 public:
  FedBaseline(const FLConfig& config, std::vector<std::vector<LabeledImage>> datasets);

  std::size_t s_max() const;
  /// floor(N_b / sigma).
  std::size_t total_rounds() const;
  /// Local Adam steps per round: sigma * floor(S_max / B_s).
  std::size_t local_steps() const;

  BaselineRoundTrace step();
  std::vector<BaselineRoundTrace> run_training();

  const BaselineNet& global_model() const { return global_; }
  const std::vector<LocalClient>& clients() const { return clients_; }
  const MessageLog& log() const { return *log_; }
  const std::vector<double>& weights() const { return weights_; }
  std::uint64_t rounds_done() const { return next_round_; }

  /// Global-model class masks [B,H,W].
  Tensor predict(const Tensor& images) const;

 private:
  FLConfig config_;
  BaselineNet global_;
  std::vector<LocalClient> clients_;
  std::vector<double> weights_;
  std::unique_ptr<MessageLog> log_;
  std::uint64_t next_round_ = 0;
};

}  // namespace pfedlvm
