#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "drift/nn/checkpoint.hpp"
#include "drift/synthlab/generator.hpp"

namespace drift::eval {

// Row-major [rows, cols] feature matrix.
struct Features {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  const double* row(std::size_t i) const { return values.data() + i * cols; }
  Features select(std::span<const std::size_t> idx) const;
  Features columns(std::size_t begin, std::size_t end) const;
};

struct ProbeOptions {
  std::size_t iterations = 300;
  double learning_rate = 0.05;  // Adam, full batch
  double l2 = 1e-4;
  std::uint64_t seed = 0;       // drives the 50/50 split
};

// Softmax linear classifier on standardized features, trained on a random
// half of the rows and scored on the other half.
double linear_probe_accuracy(const Features& x, std::span<const int> labels, std::size_t classes,
                             const ProbeOptions& opts);

struct ProbeReport {
  double rx_on_z_star = 0.0;
  double rx_on_z_prime = 0.0;
  double tx_on_z_star = 0.0;
  double chance_rx = 0.0;
};

nlohmann::json to_json(const ProbeReport& r);

// Frozen-feature probes on `samples`; receivers are relabeled by their
// position in `receivers`.
ProbeReport probe_disentanglement(const nn::Checkpoint& ckpt, const synth::Dataset& ds,
                                  std::span<const std::size_t> samples, std::span<const int> receivers,
                                  const ProbeOptions& opts);

struct ProxyOptions {
  std::size_t iterations = 300;
  double learning_rate = 0.5;  // gradient descent on the mean logistic loss
  double l2 = 1e-3;
  std::uint64_t seed = 0;
};

// Proxy A-distance 2(1 - 2e) clamped to [0, 2], where e is the held-out error
// of a linear logistic domain classifier. Each set is split in half with the
// same seed and the computation is sign-symmetric, so
// proxy_divergence(a, b) == proxy_divergence(b, a) exactly. Usage error when
// either set is empty or the sizes differ by more than 10:1.
double proxy_divergence(const Features& a, const Features& b, const ProxyOptions& opts);

enum class FeatureSpace { Raw, Z, ZStar, ZPrime };
std::string feature_space_name(FeatureSpace s);

struct DivergenceReport {
  FeatureSpace space = FeatureSpace::Raw;
  std::vector<int> sources;
  std::vector<int> targets;
  std::vector<std::vector<double>> pairwise;  // [source i][source j]
  double epsilon = 0.0;                       // max pairwise source proxy
  std::vector<double> gamma_per_target;       // target vs uniform source pool
  double gamma = 0.0;                         // mean over targets
  std::string note = "uniform-mixture proxy";
};

nlohmann::json to_json(const DivergenceReport& r);

struct BoundOptions {
  std::size_t max_per_domain = 400;
  ProxyOptions proxy;
};

struct BoundReport {
  DivergenceReport raw;
  DivergenceReport z_star;
  double epsilon_change = 0.0;  // z_star - raw
  double gamma_change = 0.0;
};

nlohmann::json to_json(const BoundReport& r);

// Features of `samples` in the given space ([N, 2L] for raw frames).
Features extract_features(const nn::Checkpoint* ckpt, const synth::Dataset& ds,
                          std::span<const std::size_t> samples, FeatureSpace space);

DivergenceReport divergence_report(const synth::Dataset& ds, const nn::Checkpoint* ckpt, FeatureSpace space,
                                   std::span<const int> sources, std::span<const int> targets,
                                   const BoundOptions& opts);

// Raw vs z* divergence proxies for one checkpoint. Needs >= 2 sources for a
// nonzero epsilon (a single source gives epsilon = 0).
BoundReport bound_report(const nn::Checkpoint& ckpt, const synth::Dataset& ds, std::span<const int> sources,
                         std::span<const int> targets, const BoundOptions& opts);

}  // namespace drift::eval
