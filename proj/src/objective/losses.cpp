#include "drift/objective/losses.hpp"

#include <cmath>
#include <map>
#include <span>
#include <vector>

#include "drift/errors.hpp"
#include "drift/nn/ops.hpp"

namespace drift::objective {

void Weights::validate() const {
  require(grl >= 0.0 && center >= 0.0 && mse >= 0.0, ErrorKind::Config,
          "loss weights must be non-negative (lambda1=" + std::to_string(grl) +
              ", lambda2=" + std::to_string(center) + ", lambda3=" + std::to_string(mse) + ")");
}

template <typename T>
std::pair<Var, Var> ce_loss(Tape<T>& tape, Var tx_logits, std::span<const int> y, Var rx_logits,
                            std::span<const int> d) {
  return {nn::softmax_cross_entropy(tape, tx_logits, y), nn::softmax_cross_entropy(tape, rx_logits, d)};
}

template <typename T>
Var grl_loss(Tape<T>& tape, Var domain_logits, std::span<const int> d) {
  return nn::softmax_cross_entropy(tape, domain_logits, d);
}

template <typename T>
Var center_loss(Tape<T>& tape, Var z_prime, std::span<const int> d, bool detach_centroids) {
  const auto& zv = tape.value(z_prime);
  require(zv.rank() == 2, ErrorKind::Shape, "center_loss expects [B, F] features");
  const std::size_t B = zv.dim(0), F = zv.dim(1);
  require(B >= 1 && d.size() == B, ErrorKind::Shape,
          "center_loss: " + std::to_string(d.size()) + " labels for batch of " + std::to_string(B));

  // Domains in ascending label order; members in batch order.
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < B; ++i) groups[d[i]].push_back(i);

  std::vector<std::vector<T>> centroids;
  T loss{};
  for (const auto& [label, members] : groups) {
    std::vector<T> c(F, T{0});
    for (auto i : members)
      for (std::size_t f = 0; f < F; ++f) c[f] += zv[i * F + f];
    const T n = static_cast<T>(members.size());
    for (auto& v : c) v /= n;
    T spread{};
    for (auto i : members)
      for (std::size_t f = 0; f < F; ++f) {
        const T r = zv[i * F + f] - c[f];
        spread += r * r;
      }
    loss += spread / n;
    centroids.push_back(std::move(c));
  }

  return tape.record(
      nn::OpKind::CenterLoss, nn::Tensor<T>::scalar(loss), {z_prime},
      [=, groups = std::move(groups), centroids = std::move(centroids)](Tape<T>& t, Var self) {
        const T g = t.grad(self)[0];
        const auto& z = t.value(z_prime);
        auto& dz = t.grad_accumulator(z_prime);
        std::size_t gi = 0;
        for (const auto& [label, members] : groups) {
          const auto& c = centroids[gi++];
          const T n = static_cast<T>(members.size());
          // d/dz_k = (2/n)(z_k - c) - (2/n^2) sum_i (z_i - c); the second term
          // is the centroid's own path and vanishes in exact arithmetic.
          std::vector<T> resid_sum(F, T{0});
          if (!detach_centroids) {
            for (auto i : members)
              for (std::size_t f = 0; f < F; ++f) resid_sum[f] += z[i * F + f] - c[f];
          }
          for (auto i : members)
            for (std::size_t f = 0; f < F; ++f) {
              T v = T{2} / n * (z[i * F + f] - c[f]);
              if (!detach_centroids) v -= T{2} / (n * n) * resid_sum[f];
              dz[i * F + f] += g * v;
            }
        }
      });
}

namespace {

// Per-row scale min(1, c / ||x_i||); all ones when c <= 0.
template <typename T>
std::vector<T> row_scales(const nn::Tensor<T>& x, double max_norm) {
  const std::size_t N = x.dim(0), F = x.dim(1);
  std::vector<T> s(N, T{1});
  if (max_norm <= 0.0) return s;
  const T c = static_cast<T>(max_norm);
  for (std::size_t i = 0; i < N; ++i) {
    T sq{};
    for (std::size_t f = 0; f < F; ++f) sq += x[i * F + f] * x[i * F + f];
    const T norm = std::sqrt(sq);
    if (norm > c) s[i] = c / norm;
  }
  return s;
}

// Adds the gradient through x -> s(x) x given upstream u for the scaled rows.
template <typename T>
void clamp_backward(const nn::Tensor<T>& x, std::span<const T> s, std::span<const T> u, nn::Tensor<T>& dx,
                    std::size_t F) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    const T* xi = x.data() + i * F;
    const T* ui = u.data() + i * F;
    T* di = dx.data() + i * F;
    if (s[i] == T{1}) {
      for (std::size_t f = 0; f < F; ++f) di[f] += ui[f];
      continue;
    }
    // s (I - x x^T / ||x||^2) u
    T sq{}, dot{};
    for (std::size_t f = 0; f < F; ++f) {
      sq += xi[f] * xi[f];
      dot += xi[f] * ui[f];
    }
    const T k = dot / sq;
    for (std::size_t f = 0; f < F; ++f) di[f] += s[i] * (ui[f] - k * xi[f]);
  }
}

}  // namespace

template <typename T>
Var separation_loss(Tape<T>& tape, Var z_star, Var z_prime, double max_norm) {
  const auto& a = tape.value(z_star);
  const auto& b = tape.value(z_prime);
  require(a.shape() == b.shape() && a.rank() == 2, ErrorKind::Shape,
          "separation_loss: shapes " + nn::shape_string(a.shape()) + " and " + nn::shape_string(b.shape()) +
              " differ");
  require(std::isfinite(max_norm) && max_norm >= 0.0, ErrorKind::Config,
          "separation_loss: max_norm must be finite and >= 0");
  const std::size_t N = a.dim(0), F = a.dim(1);
  require(N >= 1, ErrorKind::Shape, "separation_loss: empty batch");
  const auto sa = row_scales(a, max_norm);
  const auto sb = row_scales(b, max_norm);
  std::vector<T> r(a.size());
  T acc{};
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t f = 0; f < F; ++f) {
      const std::size_t k = i * F + f;
      r[k] = sa[i] * a[k] - sb[i] * b[k];
      acc += r[k] * r[k];
    }
  const T value = -(acc / static_cast<T>(N));
  return tape.record(nn::OpKind::SeparationLoss, nn::Tensor<T>::scalar(value), {z_star, z_prime},
                     [=, sa = std::move(sa), sb = std::move(sb), r = std::move(r)](Tape<T>& t, Var self) {
                       const T g = t.grad(self)[0];
                       const T k = T{2} / static_cast<T>(N) * g;
                       // Upstream for the scaled rows of z* is -k r and for z' is +k r.
                       std::vector<T> u(r.size());
                       if (t.requires_grad(z_star)) {
                         for (std::size_t i = 0; i < u.size(); ++i) u[i] = -k * r[i];
                         clamp_backward(t.value(z_star), std::span<const T>(sa), std::span<const T>(u),
                                        t.grad_accumulator(z_star), F);
                       }
                       if (t.requires_grad(z_prime)) {
                         for (std::size_t i = 0; i < u.size(); ++i) u[i] = k * r[i];
                         clamp_backward(t.value(z_prime), std::span<const T>(sb), std::span<const T>(u),
                                        t.grad_accumulator(z_prime), F);
                       }
                     });
}

template <typename T>
TotalLoss total_loss(Tape<T>& tape, const LossTerms& terms, const Weights& w) {
  w.validate();
  require(terms.ce_tx.valid(), ErrorKind::Usage, "total_loss: transmitter cross-entropy is required");
  std::vector<Var> vars;
  std::vector<T> ws;
  LossBreakdown br;
  br.weights = w;
  auto take = [&](Var v, double weight, double& slot) {
    if (!v.valid()) return;
    slot = static_cast<double>(tape.value(v)[0]);
    vars.push_back(v);
    ws.push_back(static_cast<T>(weight));
  };
  take(terms.ce_tx, 1.0, br.ce_tx);
  take(terms.ce_rx, 1.0, br.ce_rx);
  take(terms.grl, w.grl, br.grl);
  take(terms.center, w.center, br.center);
  take(terms.mse, w.mse, br.mse);
  Var total = nn::weighted_sum<T>(tape, vars, ws);
  br.total = static_cast<double>(tape.value(total)[0]);
  return {total, br};
}

#define DRIFT_INSTANTIATE_LOSSES(T)                                                                 \
  template std::pair<Var, Var> ce_loss<T>(Tape<T>&, Var, std::span<const int>, Var,                  \
                                          std::span<const int>);                                     \
  template Var grl_loss<T>(Tape<T>&, Var, std::span<const int>);                                     \
  template Var center_loss<T>(Tape<T>&, Var, std::span<const int>, bool);                            \
  template Var separation_loss<T>(Tape<T>&, Var, Var, double);                                       \
  template TotalLoss total_loss<T>(Tape<T>&, const LossTerms&, const Weights&);

DRIFT_INSTANTIATE_LOSSES(float)
DRIFT_INSTANTIATE_LOSSES(double)

#undef DRIFT_INSTANTIATE_LOSSES

}  // namespace drift::objective
