#pragma once

#include <span>
#include <utility>

#include "drift/nn/tape.hpp"

namespace drift::objective {

using nn::Tape;
using nn::Var;

// Loss weights (lambda_1 grl, lambda_2 center, lambda_3 separation). There are
// no implicit defaults; callers take them from a config file.
struct Weights {
  double grl = 0.0;
  double center = 0.0;
  double mse = 0.0;

  void validate() const;  // Config error on negative weights
  friend bool operator==(const Weights&, const Weights&) = default;
};

// Reference weighting used by the shipped configs.
inline constexpr Weights kDefaultWeights{1.0, 0.01, 0.02};

// One step's loss terms. Values are the exact training-precision scalars
// widened to double, and the weights are the training-precision casts, so
// recompute_total<T>() reproduces `total` bit-for-bit.
struct LossBreakdown {
  double ce_tx = 0.0;
  double ce_rx = 0.0;
  double grl = 0.0;
  double center = 0.0;
  double mse = 0.0;
  double total = 0.0;
  Weights weights;

  template <typename T>
  T recompute_total() const {
    T acc{};
    acc += T{1} * static_cast<T>(ce_tx);
    acc += T{1} * static_cast<T>(ce_rx);
    acc += static_cast<T>(weights.grl) * static_cast<T>(grl);
    acc += static_cast<T>(weights.center) * static_cast<T>(center);
    acc += static_cast<T>(weights.mse) * static_cast<T>(mse);
    return acc;
  }

  template <typename T>
  bool identity_holds() const {
    return recompute_total<T>() == static_cast<T>(total);
  }
};

// Batch-mean cross-entropies of the transmitter and receiver heads.
template <typename T>
std::pair<Var, Var> ce_loss(Tape<T>& tape, Var tx_logits, std::span<const int> y, Var rx_logits,
                            std::span<const int> d);

// Cross-entropy of discriminator logits (already behind the GRL) against
// receiver labels.
template <typename T>
Var grl_loss(Tape<T>& tape, Var domain_logits, std::span<const int> d);

// sum over domains present in the batch of (1/|S_d|) sum_{i in S_d} ||z_i - c_d||^2,
// with c_d the batch centroid. With detach_centroids the centroids are
// treated as constants in the backward pass.
template <typename T>
Var center_loss(Tape<T>& tape, Var z_prime, std::span<const int> d, bool detach_centroids = false);

// -(1/N) sum_i ||z*_i - z'_i||^2. With max_norm > 0 each row of both inputs
// is first scaled onto the ball of that radius when it lies outside, which
// bounds the loss below by -4 max_norm^2.
template <typename T>
Var separation_loss(Tape<T>& tape, Var z_star, Var z_prime, double max_norm = 0.0);

// Terms feeding the total; invalid Vars count as absent (value 0, skipped).
struct LossTerms {
  Var ce_tx;
  Var ce_rx;
  Var grl;
  Var center;
  Var mse;
};

struct TotalLoss {
  Var total;
  LossBreakdown breakdown;
};

// total = ce_tx + ce_rx + l1*grl + l2*center + l3*mse, summed in that order.
template <typename T>
TotalLoss total_loss(Tape<T>& tape, const LossTerms& terms, const Weights& w);

}  // namespace drift::objective
