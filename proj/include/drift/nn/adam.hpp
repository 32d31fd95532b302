#pragma once

#include <cstdint>
#include <vector>

#include "drift/nn/params.hpp"

namespace drift::nn {

template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<Tensor<T>> m;  // indexed like the parameter store; empty for buffers
  std::vector<Tensor<T>> v;
};

template <typename T>
AdamState<T> make_adam(const ParamStore<T>& params, double lr);

// One bias-corrected Adam update of every trainable parameter.
template <typename T>
void adam_step(AdamState<T>& state, ParamStore<T>& params, const Gradients<T>& grads);

}  // namespace drift::nn
