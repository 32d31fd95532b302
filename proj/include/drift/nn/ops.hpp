#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "drift/nn/tape.hpp"

namespace drift::nn {

// x[B, C_in, L], w[C_out, C_in, k], optional bias[C_out] (pass an invalid Var
// to omit). Cross-correlation with zero padding.
template <typename T>
Var conv1d(Tape<T>& tape, Var x, Var w, Var bias, std::size_t stride, std::size_t pad);

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

// Per-channel normalization over (B, L). Train mode uses batch statistics
// and updates the running estimates in place (unbiased variance, as in the
// usual framework convention); eval mode reads them.
template <typename T>
Var batchnorm1d(Tape<T>& tape, Var x, Var gamma, Var beta, Tensor<T>& running_mean,
                Tensor<T>& running_var, Mode mode, BatchNormOptions opts = {});

// x[B, n] W[m, n]^T + b
template <typename T>
Var dense(Tape<T>& tape, Var x, Var w, Var b);

template <typename T>
Var relu(Tape<T>& tape, Var x);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

// [B, C, L] -> [B, C]
template <typename T>
Var global_avg_pool(Tape<T>& tape, Var x);

// Windowed max over the last axis. Padding never wins a window; ties route
// the gradient to the first maximal index.
template <typename T>
Var max_pool1d(Tape<T>& tape, Var x, std::size_t kernel, std::size_t stride, std::size_t pad = 0);

// Row-wise softmax of a [B, K] tensor, computed with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

// Batch mean of -log softmax(logits)[label].
template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const int> labels);

// Identity forward; backward multiplies the upstream gradient by -lambda.
template <typename T>
Var grl(Tape<T>& tape, Var x, T lambda);

// Columns [begin, end) of a [B, E] tensor.
template <typename T>
Var slice_columns(Tape<T>& tape, Var x, std::size_t begin, std::size_t end);

template <typename T>
Var concat_columns(Tape<T>& tape, Var a, Var b);

template <typename T>
Var sum(Tape<T>& tape, Var x);

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor);

// sum_i weights[i] * terms[i] over scalar terms, accumulated left to right.
template <typename T>
Var weighted_sum(Tape<T>& tape, std::span<const Var> terms, std::span<const T> weights);

}  // namespace drift::nn
