#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "drift/model/network.hpp"
#include "drift/nn/checkpoint.hpp"
#include "drift/synthlab/generator.hpp"

namespace drift::eval {

// Fraction of positions where preds equals labels. Usage error when empty or
// the lengths differ.
double accuracy(std::span<const int> preds, std::span<const int> labels);

// Eval-mode outputs of a network for a list of samples.
struct Inference {
  std::vector<int> tx_pred;
  nn::Tensor<float> z;  // [N, E], empty unless requested
};

Inference infer(model::DriftNet<float>& net, const synth::Dataset& ds, std::span<const std::size_t> samples,
                bool keep_embeddings = false, std::size_t chunk = 256);

// Accuracy per test receiver for one or more checkpoints. Per-receiver
// values are averaged over checkpoints first, then over receivers.
struct CheckpointEval {
  std::vector<int> receivers;
  std::vector<double> per_receiver;
  std::vector<std::vector<double>> per_checkpoint;  // [checkpoint][receiver]
  double average = 0.0;
};

CheckpointEval evaluate(std::span<const nn::Checkpoint> checkpoints, const synth::Dataset& ds,
                        std::span<const std::size_t> test_samples, std::span<const int> test_receivers);

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<double> per_receiver;
  double average = 0.0;
};

// One method's result over seeds. per_receiver and average are seed means.
struct MetricsRecord {
  std::string method;
  std::vector<int> test_receivers;
  std::vector<double> per_receiver;
  double average = 0.0;
  std::vector<SeedResult> per_seed;
  bool checkpoint_averaged = false;
  std::size_t checkpoints = 0;

  double seed_std() const;
  // True when every stored average equals the mean of its parts.
  bool consistent() const;
};

double mean(std::span<const double> v);

MetricsRecord aggregate(std::string method, std::span<const int> test_receivers,
                        std::span<const SeedResult> seeds, std::size_t checkpoints);

nlohmann::json to_json(const MetricsRecord& r);

// Results table: one row per test receiver plus "Average", one column per
// record. Values are percentages.
std::string results_table_csv(std::span<const MetricsRecord> records);

}  // namespace drift::eval
