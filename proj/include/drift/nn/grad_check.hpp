#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "drift/nn/tape.hpp"

namespace drift::nn {

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-4;           // relative: h = step * max(|x|, 1)
  double scale_floor = 1e-3;    // denominator floor for near-zero gradients
  std::size_t max_coords = 0;   // 0 = check every coordinate
  std::uint64_t seed = 0;       // coordinate sampling when max_coords > 0
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool grl_exempted = false;  // a gradient reversal node was made transparent
  bool passed = false;
};

// Builds the scalar loss on a fresh tape given the store.
using LossBuilder = std::function<Var(Tape<double>&, ParamStore<double>&)>;

// Central-difference check of d(loss)/d(params) over trainable parameters.
// Gradient reversal nodes are set transparent on the analytic side: their
// forward is the identity, so the numeric derivative cannot see the -lambda
// factor. Their contract is checked analytically elsewhere.
GradCheckReport grad_check(const LossBuilder& loss, ParamStore<double>& params,
                           const GradCheckOptions& opts = {});

// Convenience form for a function of a single tensor.
GradCheckReport grad_check(const std::function<Var(Tape<double>&, Var)>& f,
                           const Tensor<double>& point, const GradCheckOptions& opts = {});

}  // namespace drift::nn
