#include "drift/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "drift/kernels/kernels.hpp"
#include "drift/kernels/reduce.hpp"

namespace drift::nn {

std::string_view op_name(OpKind kind) noexcept {
  switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Param: return "param";
    case OpKind::Conv1d: return "conv1d";
    case OpKind::BatchNorm: return "batchnorm1d";
    case OpKind::Dense: return "dense";
    case OpKind::Relu: return "relu";
    case OpKind::Add: return "add";
    case OpKind::GlobalAvgPool: return "global_avg_pool";
    case OpKind::MaxPool: return "max_pool1d";
    case OpKind::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::Grl: return "grl";
    case OpKind::Slice: return "slice_columns";
    case OpKind::Concat: return "concat_columns";
    case OpKind::Sum: return "sum";
    case OpKind::Scale: return "scale";
    case OpKind::WeightedSum: return "weighted_sum";
    case OpKind::CenterLoss: return "center_loss";
    case OpKind::SeparationLoss: return "separation_loss";
  }
  return "unknown";
}

namespace {

void expect_rank(const Shape& s, std::size_t rank, const char* op) {
  require(s.size() == rank, ErrorKind::Shape,
          std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(s));
}

}  // namespace

template <typename T>
Var conv1d(Tape<T>& tape, Var x, Var w, Var bias, std::size_t stride, std::size_t pad) {
  const auto& xs = tape.value(x).shape();
  const auto& ws = tape.value(w).shape();
  expect_rank(xs, 3, "conv1d input");
  expect_rank(ws, 3, "conv1d weight");
  require(stride >= 1, ErrorKind::Shape, "conv1d: stride must be >= 1");
  require(ws[1] == xs[1], ErrorKind::Shape,
          "conv1d: weight " + shape_string(ws) + " does not match input " + shape_string(xs));
  require(ws[2] <= xs[2] + 2 * pad, ErrorKind::Shape, "conv1d: kernel longer than padded input");
  if (bias.valid()) {
    require(tape.value(bias).shape() == Shape{ws[0]}, ErrorKind::Shape, "conv1d: bias shape");
  }

  kernels::Conv1dGeometry g{xs[0], xs[1], ws[0], xs[2], ws[2], stride, pad};
  const auto exec = kernels::default_exec();
  auto col = std::make_shared<std::vector<T>>(g.col_rows() * g.col_cols());
  kernels::im2col(g, tape.value(x).data(), col->data(), exec);
  Tensor<T> y(Shape{g.batch, g.out_channels, g.out_length()});
  kernels::conv1d_forward(g, col->data(), tape.value(w).data(),
                          bias.valid() ? tape.value(bias).data() : nullptr, y.data(), exec);

  std::vector<Var> inputs{x, w};
  if (bias.valid()) inputs.push_back(bias);
  return tape.record(OpKind::Conv1d, std::move(y), std::move(inputs),
                     [g, col, x, w, bias](Tape<T>& t, Var self) {
                       const auto exec = kernels::default_exec();
                       T* dx = t.requires_grad(x) ? t.grad_accumulator(x).data() : nullptr;
                       T* db = (bias.valid() && t.requires_grad(bias))
                                   ? t.grad_accumulator(bias).data()
                                   : nullptr;
                       if (t.requires_grad(w)) {
                         kernels::conv1d_backward(g, col->data(), t.value(w).data(),
                                                  t.grad(self).data(), dx,
                                                  t.grad_accumulator(w).data(), db, exec);
                       } else if (dx || db) {
                         Tensor<T> scratch(t.value(w).shape());
                         kernels::conv1d_backward(g, col->data(), t.value(w).data(),
                                                  t.grad(self).data(), dx, scratch.data(), db,
                                                  exec);
                       }
                     });
}

template <typename T>
Var batchnorm1d(Tape<T>& tape, Var x, Var gamma, Var beta, Tensor<T>& running_mean,
                Tensor<T>& running_var, Mode mode, BatchNormOptions opts) {
  const auto& xs = tape.value(x).shape();
  expect_rank(xs, 3, "batchnorm1d input");
  const std::size_t B = xs[0], C = xs[1], L = xs[2];
  require(tape.value(gamma).shape() == Shape{C} && tape.value(beta).shape() == Shape{C} &&
              running_mean.shape() == Shape{C} && running_var.shape() == Shape{C},
          ErrorKind::Shape, "batchnorm1d: parameter shapes must be (" + std::to_string(C) + ")");
  const std::size_t n = B * L;
  if (mode == Mode::Train) {
    require(n >= 2, ErrorKind::DegenerateBatch,
            "batchnorm1d: train mode needs B*L >= 2, got " + std::to_string(n));
  }

  const T eps = static_cast<T>(opts.eps);
  std::vector<T> mean(C), var(C);
  if (mode == Mode::Train) {
    kernels::channel_moments(B, C, L, tape.value(x).data(), mean.data(), var.data(),
                             kernels::default_exec());
    const T m = static_cast<T>(opts.momentum);
    const T unbias = static_cast<T>(n) / static_cast<T>(n - 1);
    for (std::size_t c = 0; c < C; ++c) {
      running_mean[c] = (T{1} - m) * running_mean[c] + m * mean[c];
      running_var[c] = (T{1} - m) * running_var[c] + m * (var[c] * unbias);
    }
  } else {
    std::copy(running_mean.values().begin(), running_mean.values().end(), mean.begin());
    std::copy(running_var.values().begin(), running_var.values().end(), var.begin());
  }

  auto inv_std = std::make_shared<std::vector<T>>(C);
  for (std::size_t c = 0; c < C; ++c) (*inv_std)[c] = T{1} / std::sqrt(var[c] + eps);

  auto xhat = std::make_shared<Tensor<T>>(xs);
  Tensor<T> y(xs);
  const T* xv = tape.value(x).data();
  const T* gv = tape.value(gamma).data();
  const T* bv = tape.value(beta).data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t off = (b * C + c) * L;
      for (std::size_t l = 0; l < L; ++l) {
        const T h = (xv[off + l] - mean[c]) * (*inv_std)[c];
        (*xhat)[off + l] = h;
        y[off + l] = gv[c] * h + bv[c];
      }
    }
  }

  const bool train = mode == Mode::Train;
  return tape.record(
      OpKind::BatchNorm, std::move(y), {x, gamma, beta},
      [=](Tape<T>& t, Var self) {
        const T* dy = t.grad(self).data();
        const T* g = t.value(gamma).data();
        std::vector<T> sum_dy(C), sum_dy_xhat(C);
        for (std::size_t c = 0; c < C; ++c) {
          T s{}, sx{};
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t off = (b * C + c) * L;
            s += kernels::sum(dy + off, L);
            sx += kernels::dot(dy + off, xhat->data() + off, L);
          }
          sum_dy[c] = s;
          sum_dy_xhat[c] = sx;
        }
        if (t.requires_grad(gamma)) {
          auto& dg = t.grad_accumulator(gamma);
          for (std::size_t c = 0; c < C; ++c) dg[c] += sum_dy_xhat[c];
        }
        if (t.requires_grad(beta)) {
          auto& db = t.grad_accumulator(beta);
          for (std::size_t c = 0; c < C; ++c) db[c] += sum_dy[c];
        }
        if (!t.requires_grad(x)) return;
        auto& dx = t.grad_accumulator(x);
        const T nn = static_cast<T>(n);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (b * C + c) * L;
            const T k = g[c] * (*inv_std)[c];
            if (train) {
              const T mdy = sum_dy[c] / nn;
              const T mdyx = sum_dy_xhat[c] / nn;
              for (std::size_t l = 0; l < L; ++l) {
                dx[off + l] += k * (dy[off + l] - mdy - (*xhat)[off + l] * mdyx);
              }
            } else {
              for (std::size_t l = 0; l < L; ++l) dx[off + l] += k * dy[off + l];
            }
          }
        }
      });
}

template <typename T>
Var dense(Tape<T>& tape, Var x, Var w, Var b) {
  const auto& xs = tape.value(x).shape();
  const auto& ws = tape.value(w).shape();
  expect_rank(xs, 2, "dense input");
  expect_rank(ws, 2, "dense weight");
  require(xs[1] == ws[1], ErrorKind::Shape,
          "dense: input " + shape_string(xs) + " does not match weight " + shape_string(ws));
  require(tape.value(b).shape() == Shape{ws[0]}, ErrorKind::Shape, "dense: bias shape");
  const std::size_t B = xs[0], in = xs[1], out = ws[0];
  Tensor<T> y(Shape{B, out});
  kernels::dense_forward(B, in, out, tape.value(x).data(), tape.value(w).data(),
                         tape.value(b).data(), y.data(), kernels::default_exec());
  return tape.record(OpKind::Dense, std::move(y), {x, w, b}, [=](Tape<T>& t, Var self) {
    T* dx = t.requires_grad(x) ? t.grad_accumulator(x).data() : nullptr;
    Tensor<T> scratch_w, scratch_b;
    T* dw;
    T* db;
    if (t.requires_grad(w)) {
      dw = t.grad_accumulator(w).data();
    } else {
      scratch_w = Tensor<T>(t.value(w).shape());
      dw = scratch_w.data();
    }
    if (t.requires_grad(b)) {
      db = t.grad_accumulator(b).data();
    } else {
      scratch_b = Tensor<T>(t.value(b).shape());
      db = scratch_b.data();
    }
    kernels::dense_backward(B, in, out, t.value(x).data(), t.value(w).data(), t.grad(self).data(),
                            dx, dw, db, kernels::default_exec());
  });
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > T{0} ? xv[i] : T{0};
  return tape.record(OpKind::Relu, std::move(y), {x}, [x](Tape<T>& t, Var self) {
    const auto& xv = t.value(x);
    const auto& g = t.grad(self);
    auto& dx = t.grad_accumulator(x);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (xv[i] > T{0}) dx[i] += g[i];
    }
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require(av.shape() == bv.shape(), ErrorKind::Shape,
          "add: shapes " + shape_string(av.shape()) + " and " + shape_string(bv.shape()));
  Tensor<T> y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return tape.record(OpKind::Add, std::move(y), {a, b}, [a, b](Tape<T>& t, Var self) {
    const auto& g = t.grad(self);
    for (Var v : {a, b}) {
      if (!t.requires_grad(v)) continue;
      auto& d = t.grad_accumulator(v);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
  });
}

template <typename T>
Var global_avg_pool(Tape<T>& tape, Var x) {
  const auto& xs = tape.value(x).shape();
  expect_rank(xs, 3, "global_avg_pool input");
  const std::size_t B = xs[0], C = xs[1], L = xs[2];
  Tensor<T> y(Shape{B, C});
  const T* xv = tape.value(x).data();
  for (std::size_t r = 0; r < B * C; ++r) y[r] = kernels::sum(xv + r * L, L) / static_cast<T>(L);
  return tape.record(OpKind::GlobalAvgPool, std::move(y), {x}, [=](Tape<T>& t, Var self) {
    const auto& g = t.grad(self);
    auto& dx = t.grad_accumulator(x);
    const T inv = T{1} / static_cast<T>(L);
    for (std::size_t r = 0; r < B * C; ++r) {
      const T v = g[r] * inv;
      for (std::size_t l = 0; l < L; ++l) dx[r * L + l] += v;
    }
  });
}

template <typename T>
Var max_pool1d(Tape<T>& tape, Var x, std::size_t kernel, std::size_t stride, std::size_t pad) {
  const auto& xs = tape.value(x).shape();
  expect_rank(xs, 3, "max_pool1d input");
  require(kernel >= 1 && stride >= 1, ErrorKind::Shape, "max_pool1d: kernel and stride >= 1");
  require(pad < kernel, ErrorKind::Shape, "max_pool1d: pad must be smaller than the window");
  require(kernel <= xs[2] + 2 * pad, ErrorKind::Shape, "max_pool1d: window longer than input");
  const std::size_t rows = xs[0] * xs[1], L = xs[2];
  const std::size_t lo = (L + 2 * pad - kernel) / stride + 1;
  Tensor<T> y(Shape{xs[0], xs[1], lo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(rows * lo);
  const T* xv = tape.value(x).data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < lo; ++o) {
      const std::ptrdiff_t start = static_cast<std::ptrdiff_t>(o * stride) - static_cast<std::ptrdiff_t>(pad);
      std::size_t best = 0;
      T best_v = -std::numeric_limits<T>::infinity();
      bool found = false;
      for (std::size_t k = 0; k < kernel; ++k) {
        const std::ptrdiff_t pos = start + static_cast<std::ptrdiff_t>(k);
        if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(L)) continue;
        const T v = xv[r * L + static_cast<std::size_t>(pos)];
        if (!found || v > best_v) {
          best_v = v;
          best = static_cast<std::size_t>(pos);
          found = true;
        }
      }
      y[r * lo + o] = best_v;
      (*argmax)[r * lo + o] = best;
    }
  }
  return tape.record(OpKind::MaxPool, std::move(y), {x}, [=](Tape<T>& t, Var self) {
    const auto& g = t.grad(self);
    auto& dx = t.grad_accumulator(x);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t o = 0; o < lo; ++o) dx[r * L + (*argmax)[r * lo + o]] += g[r * lo + o];
    }
  });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  expect_rank(logits.shape(), 2, "softmax input");
  const std::size_t B = logits.shape()[0], K = logits.shape()[1];
  Tensor<T> p(logits.shape());
  for (std::size_t i = 0; i < B; ++i) {
    const T* row = logits.data() + i * K;
    const T m = *std::max_element(row, row + K);
    T z{};
    for (std::size_t k = 0; k < K; ++k) {
      p[i * K + k] = std::exp(row[k] - m);
      z += p[i * K + k];
    }
    for (std::size_t k = 0; k < K; ++k) p[i * K + k] /= z;
  }
  return p;
}

template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const int> labels) {
  const auto& lv = tape.value(logits);
  expect_rank(lv.shape(), 2, "softmax_cross_entropy logits");
  const std::size_t B = lv.shape()[0], K = lv.shape()[1];
  require(labels.size() == B, ErrorKind::Shape,
          "softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
              std::to_string(B));
  for (int y : labels) {
    require(y >= 0 && static_cast<std::size_t>(y) < K, ErrorKind::Label,
            "label " + std::to_string(y) + " outside [0, " + std::to_string(K) + ")");
  }
  T total{};
  for (std::size_t i = 0; i < B; ++i) {
    const T* row = lv.data() + i * K;
    const T m = *std::max_element(row, row + K);
    T z{};
    for (std::size_t k = 0; k < K; ++k) z += std::exp(row[k] - m);
    total += std::log(z) - (row[labels[i]] - m);
  }
  auto probs = std::make_shared<Tensor<T>>(softmax(lv));
  std::vector<int> ys(labels.begin(), labels.end());
  return tape.record(OpKind::SoftmaxCrossEntropy, Tensor<T>::scalar(total / static_cast<T>(B)),
                     {logits}, [=](Tape<T>& t, Var self) {
                       const T g = t.grad(self)[0] / static_cast<T>(B);
                       auto& d = t.grad_accumulator(logits);
                       for (std::size_t i = 0; i < B; ++i) {
                         for (std::size_t k = 0; k < K; ++k) {
                           const T target = static_cast<std::size_t>(ys[i]) == k ? T{1} : T{0};
                           d[i * K + k] += g * ((*probs)[i * K + k] - target);
                         }
                       }
                     });
}

template <typename T>
Var grl(Tape<T>& tape, Var x, T lambda) {
  require(lambda >= T{0}, ErrorKind::Config, "grl: lambda must be non-negative");
  Tensor<T> y = tape.value(x);
  return tape.record(OpKind::Grl, std::move(y), {x}, [x, lambda](Tape<T>& t, Var self) {
    const T factor = t.grl_transparent() ? T{1} : -lambda;
    const auto& g = t.grad(self);
    auto& dx = t.grad_accumulator(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * g[i];
  });
}

template <typename T>
Var slice_columns(Tape<T>& tape, Var x, std::size_t begin, std::size_t end) {
  const auto& xs = tape.value(x).shape();
  expect_rank(xs, 2, "slice_columns input");
  require(begin < end && end <= xs[1], ErrorKind::Shape, "slice_columns: bad range");
  const std::size_t B = xs[0], E = xs[1], W = end - begin;
  Tensor<T> y(Shape{B, W});
  const T* xv = tape.value(x).data();
  for (std::size_t i = 0; i < B; ++i) std::copy(xv + i * E + begin, xv + i * E + end, y.data() + i * W);
  return tape.record(OpKind::Slice, std::move(y), {x}, [=](Tape<T>& t, Var self) {
    const auto& g = t.grad(self);
    auto& dx = t.grad_accumulator(x);
    for (std::size_t i = 0; i < B; ++i) {
      for (std::size_t j = 0; j < W; ++j) dx[i * E + begin + j] += g[i * W + j];
    }
  });
}

template <typename T>
Var concat_columns(Tape<T>& tape, Var a, Var b) {
  const auto& as = tape.value(a).shape();
  const auto& bs = tape.value(b).shape();
  expect_rank(as, 2, "concat_columns lhs");
  expect_rank(bs, 2, "concat_columns rhs");
  require(as[0] == bs[0], ErrorKind::Shape, "concat_columns: batch mismatch");
  const std::size_t B = as[0], Wa = as[1], Wb = bs[1];
  Tensor<T> y(Shape{B, Wa + Wb});
  for (std::size_t i = 0; i < B; ++i) {
    std::copy_n(tape.value(a).data() + i * Wa, Wa, y.data() + i * (Wa + Wb));
    std::copy_n(tape.value(b).data() + i * Wb, Wb, y.data() + i * (Wa + Wb) + Wa);
  }
  return tape.record(OpKind::Concat, std::move(y), {a, b}, [=](Tape<T>& t, Var self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a)) {
      auto& da = t.grad_accumulator(a);
      for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = 0; j < Wa; ++j) da[i * Wa + j] += g[i * (Wa + Wb) + j];
    }
    if (t.requires_grad(b)) {
      auto& db = t.grad_accumulator(b);
      for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = 0; j < Wb; ++j) db[i * Wb + j] += g[i * (Wa + Wb) + Wa + j];
    }
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  T s{};
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i];
  return tape.record(OpKind::Sum, Tensor<T>::scalar(s), {x}, [x](Tape<T>& t, Var self) {
    const T g = t.grad(self)[0];
    auto& dx = t.grad_accumulator(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor) {
  const auto& xv = tape.value(x);
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = factor * xv[i];
  return tape.record(OpKind::Scale, std::move(y), {x}, [x, factor](Tape<T>& t, Var self) {
    const auto& g = t.grad(self);
    auto& dx = t.grad_accumulator(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * g[i];
  });
}

template <typename T>
Var weighted_sum(Tape<T>& tape, std::span<const Var> terms, std::span<const T> weights) {
  require(terms.size() == weights.size() && !terms.empty(), ErrorKind::Shape,
          "weighted_sum: need one weight per term");
  T acc{};
  for (std::size_t i = 0; i < terms.size(); ++i) {
    require(tape.value(terms[i]).size() == 1, ErrorKind::Shape, "weighted_sum: terms must be scalars");
    acc += weights[i] * tape.value(terms[i])[0];
  }
  std::vector<Var> ins(terms.begin(), terms.end());
  std::vector<T> ws(weights.begin(), weights.end());
  return tape.record(OpKind::WeightedSum, Tensor<T>::scalar(acc), ins,
                     [ins, ws](Tape<T>& t, Var self) {
                       const T g = t.grad(self)[0];
                       for (std::size_t i = 0; i < ins.size(); ++i) {
                         if (t.requires_grad(ins[i])) t.grad_accumulator(ins[i])[0] += ws[i] * g;
                       }
                     });
}

#define DRIFT_INSTANTIATE_OPS(T)                                                                 \
  template Var conv1d<T>(Tape<T>&, Var, Var, Var, std::size_t, std::size_t);                     \
  template Var batchnorm1d<T>(Tape<T>&, Var, Var, Var, Tensor<T>&, Tensor<T>&, Mode,             \
                              BatchNormOptions);                                                 \
  template Var dense<T>(Tape<T>&, Var, Var, Var);                                                \
  template Var relu<T>(Tape<T>&, Var);                                                           \
  template Var add<T>(Tape<T>&, Var, Var);                                                       \
  template Var global_avg_pool<T>(Tape<T>&, Var);                                                \
  template Var max_pool1d<T>(Tape<T>&, Var, std::size_t, std::size_t, std::size_t);              \
  template Tensor<T> softmax<T>(const Tensor<T>&);                                               \
  template Var softmax_cross_entropy<T>(Tape<T>&, Var, std::span<const int>);                    \
  template Var grl<T>(Tape<T>&, Var, T);                                                         \
  template Var slice_columns<T>(Tape<T>&, Var, std::size_t, std::size_t);                        \
  template Var concat_columns<T>(Tape<T>&, Var, Var);                                            \
  template Var sum<T>(Tape<T>&, Var);                                                            \
  template Var scale<T>(Tape<T>&, Var, T);                                                       \
  template Var weighted_sum<T>(Tape<T>&, std::span<const Var>, std::span<const T>);

DRIFT_INSTANTIATE_OPS(float)
DRIFT_INSTANTIATE_OPS(double)

#undef DRIFT_INSTANTIATE_OPS

}  // namespace drift::nn
