#include "drift/nn/adam.hpp"

#include <cmath>
#include <string>

namespace drift::nn {

template <typename T>
AdamState<T> make_adam(const ParamStore<T>& params, double lr) {
  AdamState<T> s;
  s.lr = lr;
  s.m.resize(params.size());
  s.v.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    s.m[i] = Tensor<T>(params[i].value.shape());
    s.v[i] = Tensor<T>(params[i].value.shape());
  }
  return s;
}

template <typename T>
void adam_step(AdamState<T>& state, ParamStore<T>& params, const Gradients<T>& grads) {
  require(state.m.size() == params.size() && state.v.size() == params.size(), ErrorKind::Shape,
          "adam: state does not match parameter store");
  require(grads.size() == params.size(), ErrorKind::Shape,
          "adam: " + std::to_string(grads.size()) + " gradients for " +
              std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    require(grads[i].shape() == params[i].value.shape() && state.m[i].shape() == params[i].value.shape(),
            ErrorKind::Shape, "adam: shape mismatch for " + params[i].name);
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(state.beta1);
  const T b2 = static_cast<T>(state.beta2);
  const T c1 = static_cast<T>(1.0 - state.beta1);
  const T c2 = static_cast<T>(1.0 - state.beta2);
  const T bc1 = static_cast<T>(1.0 - std::pow(state.beta1, t));
  const T bc2 = static_cast<T>(1.0 - std::pow(state.beta2, t));
  const T lr = static_cast<T>(state.lr);
  const T eps = static_cast<T>(state.eps);

  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    auto& p = params[i].value;
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = b1 * m[k] + c1 * g[k];
      v[k] = b2 * v[k] + c2 * g[k] * g[k];
      const T mhat = m[k] / bc1;
      const T vhat = v[k] / bc2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template AdamState<float> make_adam<float>(const ParamStore<float>&, double);
template AdamState<double> make_adam<double>(const ParamStore<double>&, double);
template void adam_step<float>(AdamState<float>&, ParamStore<float>&, const Gradients<float>&);
template void adam_step<double>(AdamState<double>&, ParamStore<double>&, const Gradients<double>&);

}  // namespace drift::nn
