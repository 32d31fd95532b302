#include "drift/kernels/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "drift/kernels/reduce.hpp"

namespace drift::kernels {

namespace {

std::atomic<Exec> g_default_exec{Exec::Parallel};
thread_local int t_override = -1;

constexpr std::size_t kChunk = 256;

inline bool use_omp(Exec exec) noexcept {
#ifdef _OPENMP
  return exec == Exec::Parallel && omp_get_max_threads() > 1;
#else
  (void)exec;
  return false;
#endif
}

}  // namespace

Exec default_exec() noexcept {
  if (t_override >= 0) return static_cast<Exec>(t_override);
  return g_default_exec.load(std::memory_order_relaxed);
}

ScopedExec::ScopedExec(Exec exec) noexcept : previous_(t_override) { t_override = static_cast<int>(exec); }

ScopedExec::~ScopedExec() { t_override = previous_; }

void set_default_exec(Exec exec) noexcept { g_default_exec.store(exec, std::memory_order_relaxed); }

int configure_threads_from_env() {
#ifdef _OPENMP
  if (const char* env = std::getenv("DRIFT_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) omp_set_num_threads(n);
  }
  return omp_get_max_threads();
#else
  return 1;
#endif
}

int max_threads() noexcept {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

template <typename T>
void im2col(const Conv1dGeometry& g, const T* x, T* col, Exec exec) {
  const std::size_t lo = g.out_length();
  const std::size_t n_cols = g.col_cols();
  const auto rows = static_cast<std::ptrdiff_t>(g.col_rows());
#pragma omp parallel for schedule(static) if (use_omp(exec))
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const std::size_t ci = static_cast<std::size_t>(r) / g.kernel;
    const std::size_t k = static_cast<std::size_t>(r) % g.kernel;
    T* out = col + static_cast<std::size_t>(r) * n_cols;
    for (std::size_t b = 0; b < g.batch; ++b) {
      const T* xrow = x + (b * g.in_channels + ci) * g.in_length;
      T* orow = out + b * lo;
      for (std::size_t t = 0; t < lo; ++t) {
        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * g.stride + k) -
                                   static_cast<std::ptrdiff_t>(g.pad);
        orow[t] = (pos >= 0 && pos < static_cast<std::ptrdiff_t>(g.in_length)) ? xrow[pos] : T{};
      }
    }
  }
}

template <typename T>
void conv1d_forward(const Conv1dGeometry& g, const T* col, const T* w, const T* bias, T* y,
                    Exec exec) {
  const std::size_t lo = g.out_length();
  const std::size_t n_cols = g.col_cols();
  const std::size_t rows = g.col_rows();
  const std::size_t n_chunks = (n_cols + kChunk - 1) / kChunk;
  const auto tasks = static_cast<std::ptrdiff_t>(n_chunks * g.out_channels);
#pragma omp parallel for schedule(static) if (use_omp(exec))
  for (std::ptrdiff_t task = 0; task < tasks; ++task) {
    const std::size_t chunk = static_cast<std::size_t>(task) / g.out_channels;
    const std::size_t co = static_cast<std::size_t>(task) % g.out_channels;
    const std::size_t begin = chunk * kChunk;
    const std::size_t len = std::min(kChunk, n_cols - begin);
    T acc[kChunk];
    std::fill(acc, acc + len, T{});
    const T* wrow = w + co * rows;
    for (std::size_t r = 0; r < rows; ++r) axpy(wrow[r], col + r * n_cols + begin, acc, len);
    const T bv = bias ? bias[co] : T{};
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t n = begin + i;
      const std::size_t b = n / lo;
      const std::size_t t = n % lo;
      y[(b * g.out_channels + co) * lo + t] = acc[i] + bv;
    }
  }
}

template <typename T>
void conv1d_backward(const Conv1dGeometry& g, const T* x_col, const T* w, const T* dy, T* dx,
                     T* dw, T* db, Exec exec) {
  const std::size_t lo = g.out_length();
  const std::size_t n_cols = g.col_cols();
  const std::size_t rows = g.col_rows();
  const bool par = use_omp(exec);

  // dy as [C_out, B*L_out] so weight gradients become row dot products.
  std::vector<T> dyt(g.out_channels * n_cols);
  {
    const auto cos = static_cast<std::ptrdiff_t>(g.out_channels);
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t co = 0; co < cos; ++co) {
      for (std::size_t b = 0; b < g.batch; ++b) {
        const T* src = dy + (b * g.out_channels + static_cast<std::size_t>(co)) * lo;
        std::copy(src, src + lo, dyt.data() + static_cast<std::size_t>(co) * n_cols + b * lo);
      }
    }
  }

  {
    const auto tasks = static_cast<std::ptrdiff_t>(g.out_channels * rows);
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t task = 0; task < tasks; ++task) {
      const std::size_t co = static_cast<std::size_t>(task) / rows;
      const std::size_t r = static_cast<std::size_t>(task) % rows;
      dw[co * rows + r] += dot(dyt.data() + co * n_cols, x_col + r * n_cols, n_cols);
    }
  }

  if (db) {
    const auto cos = static_cast<std::ptrdiff_t>(g.out_channels);
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t co = 0; co < cos; ++co) {
      db[co] += sum(dyt.data() + static_cast<std::size_t>(co) * n_cols, n_cols);
    }
  }

  if (!dx) return;

  std::vector<T> dcol(rows * n_cols);
  {
    const std::size_t n_chunks = (n_cols + kChunk - 1) / kChunk;
    const auto tasks = static_cast<std::ptrdiff_t>(n_chunks * rows);
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t task = 0; task < tasks; ++task) {
      const std::size_t chunk = static_cast<std::size_t>(task) / rows;
      const std::size_t r = static_cast<std::size_t>(task) % rows;
      const std::size_t begin = chunk * kChunk;
      const std::size_t len = std::min(kChunk, n_cols - begin);
      T* out = dcol.data() + r * n_cols + begin;
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        axpy(w[co * rows + r], dyt.data() + co * n_cols + begin, out, len);
      }
    }
  }

  // col2im: each (b, ci) input row is owned by one iteration; taps are added
  // in k order.
  const auto planes = static_cast<std::ptrdiff_t>(g.batch * g.in_channels);
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t p = 0; p < planes; ++p) {
    const std::size_t b = static_cast<std::size_t>(p) / g.in_channels;
    const std::size_t ci = static_cast<std::size_t>(p) % g.in_channels;
    T* xrow = dx + (b * g.in_channels + ci) * g.in_length;
    for (std::size_t k = 0; k < g.kernel; ++k) {
      const T* src = dcol.data() + (ci * g.kernel + k) * n_cols + b * lo;
      for (std::size_t t = 0; t < lo; ++t) {
        const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * g.stride + k) -
                                   static_cast<std::ptrdiff_t>(g.pad);
        if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(g.in_length)) xrow[pos] += src[t];
      }
    }
  }
}

template <typename T>
void dense_forward(std::size_t batch, std::size_t in, std::size_t out, const T* x, const T* w,
                   const T* b, T* y, Exec exec) {
  const auto tasks = static_cast<std::ptrdiff_t>(batch * out);
#pragma omp parallel for schedule(static) if (use_omp(exec))
  for (std::ptrdiff_t task = 0; task < tasks; ++task) {
    const std::size_t i = static_cast<std::size_t>(task) / out;
    const std::size_t j = static_cast<std::size_t>(task) % out;
    y[i * out + j] = dot(x + i * in, w + j * in, in) + (b ? b[j] : T{});
  }
}

template <typename T>
void dense_backward(std::size_t batch, std::size_t in, std::size_t out, const T* x, const T* w,
                    const T* dy, T* dx, T* dw, T* db, Exec exec) {
  const bool par = use_omp(exec);
  if (dx) {
    const auto rows = static_cast<std::ptrdiff_t>(batch);
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t i = 0; i < rows; ++i) {
      T* dxrow = dx + static_cast<std::size_t>(i) * in;
      const T* dyrow = dy + static_cast<std::size_t>(i) * out;
      for (std::size_t j = 0; j < out; ++j) axpy(dyrow[j], w + j * in, dxrow, in);
    }
  }
  const auto cols = static_cast<std::ptrdiff_t>(out);
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t j = 0; j < cols; ++j) {
    const auto jj = static_cast<std::size_t>(j);
    T* dwrow = dw + jj * in;
    T bias_acc{};
    for (std::size_t i = 0; i < batch; ++i) {
      const T g = dy[i * out + jj];
      axpy(g, x + i * in, dwrow, in);
      bias_acc += g;
    }
    if (db) db[jj] += bias_acc;
  }
}

template <typename T>
void channel_moments(std::size_t batch, std::size_t channels, std::size_t length, const T* x,
                     T* mean, T* var, Exec exec) {
  const T n = static_cast<T>(batch * length);
  const auto cs = static_cast<std::ptrdiff_t>(channels);
#pragma omp parallel for schedule(static) if (use_omp(exec))
  for (std::ptrdiff_t c = 0; c < cs; ++c) {
    const auto cc = static_cast<std::size_t>(c);
    T s{};
    for (std::size_t b = 0; b < batch; ++b) s += sum(x + (b * channels + cc) * length, length);
    const T m = s / n;
    T ss{};
    for (std::size_t b = 0; b < batch; ++b) ss += sum_sq_dev(x + (b * channels + cc) * length, length, m);
    mean[cc] = m;
    var[cc] = ss / n;
  }
}

#define DRIFT_INSTANTIATE_KERNELS(T)                                                            \
  template void im2col<T>(const Conv1dGeometry&, const T*, T*, Exec);                           \
  template void conv1d_forward<T>(const Conv1dGeometry&, const T*, const T*, const T*, T*,      \
                                  Exec);                                                        \
  template void conv1d_backward<T>(const Conv1dGeometry&, const T*, const T*, const T*, T*, T*, \
                                   T*, Exec);                                                   \
  template void dense_forward<T>(std::size_t, std::size_t, std::size_t, const T*, const T*,     \
                                 const T*, T*, Exec);                                           \
  template void dense_backward<T>(std::size_t, std::size_t, std::size_t, const T*, const T*,    \
                                  const T*, T*, T*, T*, Exec);                                  \
  template void channel_moments<T>(std::size_t, std::size_t, std::size_t, const T*, T*, T*,     \
                                   Exec);

DRIFT_INSTANTIATE_KERNELS(float)
DRIFT_INSTANTIATE_KERNELS(double)

#undef DRIFT_INSTANTIATE_KERNELS

}  // namespace drift::kernels
