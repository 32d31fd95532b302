#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "drift/model/network.hpp"
#include "drift/nn/adam.hpp"
#include "drift/nn/checkpoint.hpp"
#include "drift/objective/losses.hpp"
#include "drift/synthlab/generator.hpp"

namespace drift::train {

// Drift: full objective. Mtl: tx + rx heads on the split embedding.
// Erm: tx head on the whole embedding. Dann: tx head plus GRL discriminator on
// the whole embedding. TxOnly: split embedding with only the tx head.
enum class Method { Drift, Erm, Mtl, Dann, TxOnly };

std::string method_name(Method m);
Method method_from_name(const std::string& name);
model::Layout layout_for(Method m);

struct TrainConfig {
  Method method = Method::Drift;
  std::size_t epochs = 0;
  std::size_t batch_size = 0;
  double learning_rate = 0.0;
  objective::Weights weights;
  std::uint64_t seed = 0;
  model::Preset preset = model::Preset::Desk;
  std::size_t embedding_dim = 0;  // 0 keeps the preset's width
  std::size_t checkpoint_last_n = 5;
  bool detach_centroids = false;
  // Feed the rx head a constant copy of z', so CE2 trains only the head.
  bool detach_rx_head = false;
  // Row-norm bound applied to z* and z' inside the separation loss; 0 is off.
  double feature_clamp = 0.0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Weights actually applied for the method (zero for terms it does not use).
objective::Weights effective_weights(const TrainConfig& cfg);

// Samples a run trains on. Domain labels are positions in `receivers`.
struct TrainSet {
  const synth::Dataset* data = nullptr;
  std::vector<std::size_t> indices;
  std::vector<int> receivers;

  int domain_of(std::size_t sample) const;
};

TrainSet make_train_set(const synth::Dataset& ds, std::span<const std::size_t> indices,
                        std::span<const int> receivers);

// Per-epoch shuffle of `count` positions seeded by (seed, epoch); the last
// short batch is kept. Entries are positions into TrainSet::indices.
std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size,
                                                   std::uint64_t seed, std::size_t epoch);

// Gathers frames into [B, 2, L].
template <typename T>
nn::Tensor<T> gather_frames(const synth::Dataset& ds, std::span<const std::size_t> samples);

model::ModelConfig model_config_for(const TrainConfig& cfg, std::size_t num_transmitters,
                                    std::size_t num_domains, std::size_t length);

struct TrainState {
  model::DriftNet<float> net;
  nn::AdamState<float> adam;
  std::size_t epoch = 0;  // completed epochs
  std::uint64_t step = 0;
};

TrainState init_state(const TrainConfig& cfg, const model::ModelConfig& model_cfg);

struct Batch {
  nn::Tensor<float> x;
  std::vector<int> y;
  std::vector<int> d;
};

Batch assemble_batch(const TrainSet& set, std::span<const std::size_t> positions);

struct StepResult {
  objective::LossBreakdown loss;
  std::size_t tx_correct = 0;
};

// Forward, losses, backward and one Adam update. Throws Numeric with the step,
// offending term and max |grad| when the loss or a gradient is not finite.
StepResult train_step(TrainState& state, const Batch& batch, const TrainConfig& cfg);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_accuracy = 0.0;
  double mean_ce_tx = 0.0;
  double mean_total = 0.0;
};

struct TrainHooks {
  // Sample ids (dataset indices) of each batch, before the step runs.
  std::function<void(std::span<const std::size_t>)> on_batch;
  std::function<void(std::uint64_t step, const objective::LossBreakdown&)> on_step;
  std::function<void(const EpochStats&, const nn::Checkpoint&)> on_epoch;
};

struct TrainResult {
  std::vector<nn::Checkpoint> checkpoints;  // last checkpoint_last_n epochs, oldest first
  std::vector<objective::LossBreakdown> steps;
  std::vector<EpochStats> epochs;
  nn::Checkpoint final_checkpoint;
};

nn::Checkpoint make_checkpoint(const TrainState& state, const TrainConfig& cfg,
                               std::span<const int> receivers);

// Runs epochs state.epoch+1 .. cfg.epochs.
TrainResult train(const TrainSet& set, const TrainConfig& cfg, const TrainHooks& hooks = {},
                  std::optional<TrainState> resume_from = std::nullopt);

// Rebuilds the training state from a checkpoint written by train().
TrainState resume(const nn::Checkpoint& ckpt);

// Network (without optimizer state) described by a checkpoint.
model::DriftNet<float> load_network(const nn::Checkpoint& ckpt);

// Throws ArchitectureMismatch when the checkpoint was not built for `expected`.
void check_architecture(const nn::Checkpoint& ckpt, const model::ModelConfig& expected);

}  // namespace drift::train
