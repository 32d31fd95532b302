#pragma once

#include <cstddef>

namespace drift::kernels {

// Serial and OpenMP execution share one loop body per kernel; each output
// element is produced by exactly one iteration with a fixed inner order, so
// both policies give bit-identical results.
enum class Exec { Serial, Parallel };

// Process-wide policy, overridable per thread with ScopedExec.
Exec default_exec() noexcept;
void set_default_exec(Exec exec) noexcept;

class ScopedExec {
 public:
  explicit ScopedExec(Exec exec) noexcept;
  ~ScopedExec();
  ScopedExec(const ScopedExec&) = delete;
  ScopedExec& operator=(const ScopedExec&) = delete;

 private:
  int previous_;
};

// Applies DRIFT_THREADS (if set) and returns the effective thread count.
int configure_threads_from_env();
int max_threads() noexcept;

struct Conv1dGeometry {
  std::size_t batch = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t in_length = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_length() const noexcept { return (in_length + 2 * pad - kernel) / stride + 1; }
  std::size_t col_rows() const noexcept { return in_channels * kernel; }
  std::size_t col_cols() const noexcept { return batch * out_length(); }
};

// col is [in_channels*kernel, batch*out_length]; padded taps are zero.
template <typename T>
void im2col(const Conv1dGeometry& g, const T* x, T* col, Exec exec);

// y[B, C_out, L_out] = W * col (+ bias). bias may be null. Overwrites y.
template <typename T>
void conv1d_forward(const Conv1dGeometry& g, const T* col, const T* w, const T* bias, T* y,
                    Exec exec);

// Accumulates gradients into dw, and into dx/db when non-null.
template <typename T>
void conv1d_backward(const Conv1dGeometry& g, const T* x_col, const T* w, const T* dy, T* dx,
                     T* dw, T* db, Exec exec);

// y[B, m] = x[B, n] W[m, n]^T + b. Overwrites y.
template <typename T>
void dense_forward(std::size_t batch, std::size_t in, std::size_t out, const T* x, const T* w,
                   const T* b, T* y, Exec exec);

// Accumulates into dx (nullable), dw, db.
template <typename T>
void dense_backward(std::size_t batch, std::size_t in, std::size_t out, const T* x, const T* w,
                    const T* dy, T* dx, T* dw, T* db, Exec exec);

// Per-channel batch statistics over (B, L) of x[B, C, L].
template <typename T>
void channel_moments(std::size_t batch, std::size_t channels, std::size_t length, const T* x,
                     T* mean, T* var, Exec exec);

}  // namespace drift::kernels
