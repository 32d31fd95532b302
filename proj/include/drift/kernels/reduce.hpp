#pragma once

#include <cstddef>

namespace drift::kernels {

// Fixed-order reductions. Eight interleaved partial sums combined pairwise
// let the compiler vectorize without reassociation, and the result does not
// depend on which thread runs the loop.
inline constexpr std::size_t kLanes = 8;

template <typename T>
T dot(const T* a, const T* b, std::size_t n) noexcept {
  T acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t j = 0; j < kLanes; ++j) acc[j] += a[i + j] * b[i + j];
  }
  T tail{};
  for (; i < n; ++i) tail += a[i] * b[i];
  return (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) + tail;
}

template <typename T>
T sum(const T* a, std::size_t n) noexcept {
  T acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t j = 0; j < kLanes; ++j) acc[j] += a[i + j];
  }
  T tail{};
  for (; i < n; ++i) tail += a[i];
  return (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) + tail;
}

// Sum of squared deviations from `center`.
template <typename T>
T sum_sq_dev(const T* a, std::size_t n, T center) noexcept {
  T acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t j = 0; j < kLanes; ++j) {
      const T d = a[i + j] - center;
      acc[j] += d * d;
    }
  }
  T tail{};
  for (; i < n; ++i) {
    const T d = a[i] - center;
    tail += d * d;
  }
  return (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) + tail;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) noexcept {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace drift::kernels
