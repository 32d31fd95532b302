#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "drift/eval/metrics.hpp"
#include "drift/synthlab/generator.hpp"
#include "drift/train/trainer.hpp"

namespace drift::eval {

struct ProtocolSpec {
  std::vector<int> train_receivers;
  std::vector<int> test_receivers;
  std::vector<std::uint64_t> seeds;
  int test_day = 0;  // channel tag of the test data; nonzero means a regenerated test set

  void validate(std::size_t num_receivers) const;
};

nlohmann::json to_json(const ProtocolSpec& p);

// Training and test data may differ (cross-day runs); both carry all
// receivers and the protocol selects from them.
struct ProtocolData {
  const synth::Dataset* train = nullptr;
  const synth::Dataset* test = nullptr;
};

// Counts training samples whose receiver is a test receiver.
struct SampleAudit {
  std::atomic<std::size_t> batches{0};
  std::atomic<std::size_t> samples{0};
  std::atomic<std::size_t> violations{0};
};

struct RunArtifacts {
  std::uint64_t seed = 0;
  train::TrainResult result;
  CheckpointEval eval;
};

struct MethodRun {
  MetricsRecord record;
  std::vector<RunArtifacts> runs;  // one per seed, in protocol order
};

struct RunOptions {
  SampleAudit* audit = nullptr;
  std::size_t parallel_runs = 1;  // independent seeds trained concurrently
  // Called once per finished (label, seed) run, serialized.
  std::function<void(const std::string& label, const RunArtifacts&)> on_run;
};

// Training and test sample indices for the protocol.
struct ProtocolSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

ProtocolSplit protocol_split(const ProtocolSpec& p, const ProtocolData& data);

// Trains cfg (method and weights as given) once per protocol seed and
// evaluates the last checkpoints on the test receivers. `label` names the
// resulting record.
MethodRun run_config(const std::string& label, const train::TrainConfig& cfg, const ProtocolSpec& p,
                     const ProtocolData& data, const RunOptions& opts = {});

MethodRun run_method(train::Method method, const ProtocolSpec& p, const ProtocolData& data,
                     const train::TrainConfig& base, const RunOptions& opts = {});

struct AblationCell {
  std::string name;
  bool grl;
  bool center;
  bool mse;
};

// Basic Model, +GRL, +Cen, +MSE, +MSE+GRL, +MSE+Cen, +GRL+Cen, Full Model.
std::vector<AblationCell> ablation_cells();

// Config of one ablation row: Basic Model is the MTL baseline, the rest are
// DRIFT with the unused weights set to zero.
train::TrainConfig ablation_config(const AblationCell& cell, const train::TrainConfig& base);

std::vector<MethodRun> ablation_grid(const ProtocolSpec& p, const ProtocolData& data,
                                     const train::TrainConfig& base, const RunOptions& opts = {});

std::string ablation_csv(std::span<const MethodRun> rows);

enum class SweepParam { Lambda1, Lambda2, Lambda3 };
SweepParam sweep_param_from_name(const std::string& name);
std::string sweep_param_name(SweepParam p);

struct SweepPoint {
  double value = 0.0;
  MethodRun run;
};

// DRIFT runs with one weight replaced by each value in order; the other
// weights stay as in `base`.
std::vector<SweepPoint> sweep(SweepParam param, std::span<const double> values, const ProtocolSpec& p,
                              const ProtocolData& data, const train::TrainConfig& base,
                              const RunOptions& opts = {});

std::string sweep_csv(SweepParam param, std::span<const SweepPoint> points);

}  // namespace drift::eval
