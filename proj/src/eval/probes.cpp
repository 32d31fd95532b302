#include "drift/eval/probes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "drift/errors.hpp"
#include "drift/eval/metrics.hpp"
#include "drift/train/trainer.hpp"

namespace drift::eval {

Features Features::select(std::span<const std::size_t> idx) const {
  Features out{idx.size(), cols, {}};
  out.values.reserve(idx.size() * cols);
  for (auto i : idx) out.values.insert(out.values.end(), row(i), row(i) + cols);
  return out;
}

Features Features::columns(std::size_t begin, std::size_t end) const {
  require(begin < end && end <= cols, ErrorKind::Usage, "feature column range out of bounds");
  Features out{rows, end - begin, {}};
  out.values.reserve(rows * out.cols);
  for (std::size_t i = 0; i < rows; ++i) out.values.insert(out.values.end(), row(i) + begin, row(i) + end);
  return out;
}

namespace {

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed, std::uint64_t tag) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  auto rng = synth::substream(seed, {0x50726f62ULL, tag});
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng() % i]);
  return p;
}

struct Standardizer {
  std::vector<double> mean, inv_std;

  void apply(const double* x, double* out) const {
    for (std::size_t c = 0; c < mean.size(); ++c) out[c] = (x[c] - mean[c]) * inv_std[c];
  }
};

// Column sums and squared deviations are accumulated per part and then
// combined, so the result does not depend on the order of the parts.
Standardizer fit_standardizer(std::span<const Features* const> parts,
                              std::span<const std::vector<std::size_t>* const> rows) {
  const std::size_t cols = parts[0]->cols;
  std::size_t n = 0;
  std::vector<std::vector<double>> sums(parts.size(), std::vector<double>(cols, 0.0));
  for (std::size_t p = 0; p < parts.size(); ++p) {
    for (auto i : *rows[p]) {
      const double* x = parts[p]->row(i);
      for (std::size_t c = 0; c < cols; ++c) sums[p][c] += x[c];
    }
    n += rows[p]->size();
  }
  Standardizer s;
  s.mean.assign(cols, 0.0);
  s.inv_std.assign(cols, 1.0);
  for (std::size_t c = 0; c < cols; ++c) {
    double t = sums[0][c];
    for (std::size_t p = 1; p < parts.size(); ++p) t += sums[p][c];
    s.mean[c] = t / static_cast<double>(n);
  }
  std::vector<std::vector<double>> sq(parts.size(), std::vector<double>(cols, 0.0));
  for (std::size_t p = 0; p < parts.size(); ++p) {
    for (auto i : *rows[p]) {
      const double* x = parts[p]->row(i);
      for (std::size_t c = 0; c < cols; ++c) sq[p][c] += (x[c] - s.mean[c]) * (x[c] - s.mean[c]);
    }
  }
  for (std::size_t c = 0; c < cols; ++c) {
    double t = sq[0][c];
    for (std::size_t p = 1; p < parts.size(); ++p) t += sq[p][c];
    const double sd = std::sqrt(t / static_cast<double>(n));
    s.inv_std[c] = sd > 1e-8 ? 1.0 / sd : 1.0;
  }
  return s;
}

}  // namespace

double linear_probe_accuracy(const Features& x, std::span<const int> labels, std::size_t classes,
                             const ProbeOptions& opts) {
  require(x.rows >= 2 && labels.size() == x.rows, ErrorKind::Usage, "probe needs >= 2 labeled rows");
  require(classes >= 2, ErrorKind::Usage, "probe needs >= 2 classes");
  for (int y : labels) {
    require(y >= 0 && static_cast<std::size_t>(y) < classes, ErrorKind::Label, "probe label out of range");
  }
  const auto perm = permutation(x.rows, opts.seed, x.rows);
  const std::size_t n_train = x.rows / 2;
  std::vector<std::size_t> train(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());

  const Features* part[] = {&x};
  const std::vector<std::size_t>* rows[] = {&train};
  const auto stdz = fit_standardizer(part, rows);
  const std::size_t F = x.cols, K = classes;
  std::vector<double> xs(x.rows * F);
  for (std::size_t i = 0; i < x.rows; ++i) stdz.apply(x.row(i), xs.data() + i * F);

  // Parameters: W [K, F] then b [K].
  const std::size_t P = K * F + K;
  std::vector<double> w(P, 0.0), g(P), m(P, 0.0), v(P, 0.0), logits(K);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  auto forward = [&](std::size_t i) {
    const double* xi = xs.data() + i * F;
    for (std::size_t k = 0; k < K; ++k) {
      double s = w[K * F + k];
      for (std::size_t f = 0; f < F; ++f) s += w[k * F + f] * xi[f];
      logits[k] = s;
    }
  };
  for (std::size_t it = 1; it <= opts.iterations; ++it) {
    for (std::size_t p = 0; p < K * F; ++p) g[p] = opts.l2 * w[p];
    std::fill(g.begin() + static_cast<std::ptrdiff_t>(K * F), g.end(), 0.0);
    for (auto i : train) {
      forward(i);
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (auto& l : logits) z += (l = std::exp(l - mx));
      const double* xi = xs.data() + i * F;
      for (std::size_t k = 0; k < K; ++k) {
        const double d = (logits[k] / z - (static_cast<std::size_t>(labels[i]) == k ? 1.0 : 0.0)) /
                         static_cast<double>(n_train);
        for (std::size_t f = 0; f < F; ++f) g[k * F + f] += d * xi[f];
        g[K * F + k] += d;
      }
    }
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(it));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(it));
    for (std::size_t p = 0; p < P; ++p) {
      m[p] = b1 * m[p] + (1 - b1) * g[p];
      v[p] = b2 * v[p] + (1 - b2) * g[p] * g[p];
      w[p] -= opts.learning_rate * (m[p] / c1) / (std::sqrt(v[p] / c2) + eps);
    }
  }
  std::size_t hit = 0;
  for (auto i : test) {
    forward(i);
    hit += static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin()) == labels[i];
  }
  return static_cast<double>(hit) / static_cast<double>(test.size());
}

nlohmann::json to_json(const ProbeReport& r) {
  return {{"rx_on_z_star", r.rx_on_z_star},
          {"rx_on_z_prime", r.rx_on_z_prime},
          {"tx_on_z_star", r.tx_on_z_star},
          {"chance_rx", r.chance_rx}};
}

std::string feature_space_name(FeatureSpace s) {
  switch (s) {
    case FeatureSpace::Raw: return "raw";
    case FeatureSpace::Z: return "z";
    case FeatureSpace::ZStar: return "z_star";
    case FeatureSpace::ZPrime: return "z_prime";
  }
  return "?";
}

Features extract_features(const nn::Checkpoint* ckpt, const synth::Dataset& ds,
                          std::span<const std::size_t> samples, FeatureSpace space) {
  if (space == FeatureSpace::Raw) {
    Features f{samples.size(), ds.frame_size(), {}};
    f.values.reserve(f.rows * f.cols);
    for (auto i : samples) {
      const auto fr = ds.frame(i);
      f.values.insert(f.values.end(), fr.begin(), fr.end());
    }
    return f;
  }
  require(ckpt != nullptr, ErrorKind::Usage, "embedding features need a checkpoint");
  auto net = train::load_network(*ckpt);
  const std::size_t E = net.config().encoder.embedding_dim;
  if (space != FeatureSpace::Z) {
    require(net.config().layout.split, ErrorKind::Usage,
            "checkpoint has no split embedding; " + feature_space_name(space) + " is undefined");
  }
  const auto inf = infer(net, ds, samples, true);
  Features z{samples.size(), E, {inf.z.values().begin(), inf.z.values().end()}};
  if (space == FeatureSpace::ZStar) return z.columns(0, E / 2);
  if (space == FeatureSpace::ZPrime) return z.columns(E / 2, E);
  return z;
}

ProbeReport probe_disentanglement(const nn::Checkpoint& ckpt, const synth::Dataset& ds,
                                  std::span<const std::size_t> samples, std::span<const int> receivers,
                                  const ProbeOptions& opts) {
  require(receivers.size() >= 2, ErrorKind::Usage, "receiver probes need >= 2 receivers");
  const auto z = extract_features(&ckpt, ds, samples, FeatureSpace::Z);
  const std::size_t half = z.cols / 2;
  std::vector<int> rx(samples.size()), tx(samples.size());
  for (std::size_t k = 0; k < samples.size(); ++k) {
    auto it = std::find(receivers.begin(), receivers.end(), static_cast<int>(ds.rx[samples[k]]));
    require(it != receivers.end(), ErrorKind::Usage, "probe sample from an unlisted receiver");
    rx[k] = static_cast<int>(it - receivers.begin());
    tx[k] = ds.tx[samples[k]];
  }
  const auto zs = z.columns(0, half);
  const auto zp = z.columns(half, z.cols);
  ProbeReport r;
  r.rx_on_z_star = linear_probe_accuracy(zs, rx, receivers.size(), opts);
  r.rx_on_z_prime = linear_probe_accuracy(zp, rx, receivers.size(), opts);
  r.tx_on_z_star = linear_probe_accuracy(zs, tx, ds.num_transmitters, opts);
  r.chance_rx = 1.0 / static_cast<double>(receivers.size());
  return r;
}

double proxy_divergence(const Features& a, const Features& b, const ProxyOptions& opts) {
  require(a.rows > 0 && b.rows > 0, ErrorKind::Usage, "proxy divergence needs two nonempty sets");
  require(a.cols == b.cols, ErrorKind::Usage, "proxy divergence: feature widths differ");
  const std::size_t lo = std::min(a.rows, b.rows), hi = std::max(a.rows, b.rows);
  require(hi <= 10 * lo, ErrorKind::Usage,
          "proxy divergence: class imbalance " + std::to_string(hi) + ":" + std::to_string(lo) +
              " exceeds 10:1");
  require(lo >= 2, ErrorKind::Usage, "proxy divergence needs at least 2 samples per set");

  // Both sets are split with the same seed, independent of argument order.
  auto halves = [&](std::size_t n) {
    const auto p = permutation(n, opts.seed, 0);
    const auto mid = static_cast<std::ptrdiff_t>(n / 2);
    return std::pair{std::vector<std::size_t>(p.begin(), p.begin() + mid),
                     std::vector<std::size_t>(p.begin() + mid, p.end())};
  };
  const auto [a_train, a_test] = halves(a.rows);
  const auto [b_train, b_test] = halves(b.rows);
  const Features* parts[] = {&a, &b};
  const std::vector<std::size_t>* rows[] = {&a_train, &b_train};
  const auto stdz = fit_standardizer(parts, rows);

  const std::size_t F = a.cols;
  auto standardize = [&](const Features& x) {
    std::vector<double> out(x.rows * F);
    for (std::size_t i = 0; i < x.rows; ++i) stdz.apply(x.row(i), out.data() + i * F);
    return out;
  };
  const auto xa = standardize(a), xb = standardize(b);

  // Margin m = w.x + c; set a has sign +1 and set b sign -1. Every quantity
  // below flips sign exactly when the sets are swapped.
  std::vector<double> w(F, 0.0), ga(F), gb(F);
  double c = 0.0;
  auto margin = [&](const double* x) {
    double s = c;
    for (std::size_t f = 0; f < F; ++f) s += w[f] * x[f];
    return s;
  };
  auto partial = [&](const std::vector<double>& xs, const std::vector<std::size_t>& idx, double sign,
                     std::vector<double>& gw, double& gc) {
    std::fill(gw.begin(), gw.end(), 0.0);
    gc = 0.0;
    const double scale = 0.5 / static_cast<double>(idx.size());
    for (auto i : idx) {
      const double* x = xs.data() + i * F;
      const double q = 1.0 / (1.0 + std::exp(sign * margin(x)));
      const double coef = -sign * q * scale;
      for (std::size_t f = 0; f < F; ++f) gw[f] += coef * x[f];
      gc += coef;
    }
  };
  for (std::size_t it = 0; it < opts.iterations; ++it) {
    double gca = 0.0, gcb = 0.0;
    partial(xa, a_train, 1.0, ga, gca);
    partial(xb, b_train, -1.0, gb, gcb);
    for (std::size_t f = 0; f < F; ++f) w[f] -= opts.learning_rate * ((ga[f] + gb[f]) + opts.l2 * w[f]);
    c -= opts.learning_rate * (gca + gcb);
  }
  // Balanced held-out error; a zero margin counts as a mistake on both sides.
  std::size_t err_a = 0, err_b = 0;
  for (auto i : a_test) err_a += margin(xa.data() + i * F) <= 0.0;
  for (auto i : b_test) err_b += margin(xb.data() + i * F) >= 0.0;
  const double ea = static_cast<double>(err_a) / static_cast<double>(a_test.size());
  const double eb = static_cast<double>(err_b) / static_cast<double>(b_test.size());
  const double e = 0.5 * (ea + eb);
  return std::clamp(2.0 * (1.0 - 2.0 * e), 0.0, 2.0);
}

nlohmann::json to_json(const DivergenceReport& r) {
  return {{"space", feature_space_name(r.space)}, {"sources", r.sources},
          {"targets", r.targets},                 {"pairwise", r.pairwise},
          {"epsilon", r.epsilon},                 {"gamma_per_target", r.gamma_per_target},
          {"gamma", r.gamma},                     {"note", r.note}};
}

nlohmann::json to_json(const BoundReport& r) {
  return {{"raw", to_json(r.raw)},
          {"z_star", to_json(r.z_star)},
          {"epsilon_change", r.epsilon_change},
          {"gamma_change", r.gamma_change}};
}

namespace {

std::vector<std::size_t> domain_samples(const synth::Dataset& ds, int rx, std::size_t cap, std::uint64_t seed,
                                        std::uint64_t tag) {
  std::vector<std::size_t> all;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.rx[i] == rx) all.push_back(i);
  }
  require(!all.empty(), ErrorKind::Usage, "no samples for receiver " + std::to_string(rx));
  if (all.size() <= cap) return all;
  const auto p = permutation(all.size(), seed, tag);
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < cap; ++k) out.push_back(all[p[k]]);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

DivergenceReport divergence_report(const synth::Dataset& ds, const nn::Checkpoint* ckpt, FeatureSpace space,
                                   std::span<const int> sources, std::span<const int> targets,
                                   const BoundOptions& opts) {
  require(!sources.empty(), ErrorKind::Usage, "divergence report needs at least one source receiver");
  DivergenceReport r;
  r.space = space;
  r.sources.assign(sources.begin(), sources.end());
  r.targets.assign(targets.begin(), targets.end());

  auto features_of = [&](int rx, std::uint64_t tag) {
    const auto idx = domain_samples(ds, rx, opts.max_per_domain, opts.proxy.seed, tag);
    return extract_features(ckpt, ds, idx, space);
  };
  std::vector<Features> src;
  for (std::size_t i = 0; i < sources.size(); ++i) src.push_back(features_of(sources[i], 1000 + i));

  r.pairwise.assign(sources.size(), std::vector<double>(sources.size(), 0.0));
  for (std::size_t i = 0; i < sources.size(); ++i) {
    for (std::size_t j = i + 1; j < sources.size(); ++j) {
      const double v = proxy_divergence(src[i], src[j], opts.proxy);
      r.pairwise[i][j] = r.pairwise[j][i] = v;
      r.epsilon = std::max(r.epsilon, v);
    }
  }

  for (std::size_t t = 0; t < targets.size(); ++t) {
    const auto tgt = features_of(targets[t], 2000 + t);
    // Uniform mixture: an equal share of the target's size from every source.
    const std::size_t share = std::max<std::size_t>(1, tgt.rows / sources.size());
    Features pool{0, tgt.cols, {}};
    for (std::size_t i = 0; i < src.size(); ++i) {
      const auto p = permutation(src[i].rows, opts.proxy.seed, 3000 + 17 * t + i);
      std::vector<std::size_t> pick(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(std::min(share, p.size())));
      const auto part = src[i].select(pick);
      pool.values.insert(pool.values.end(), part.values.begin(), part.values.end());
      pool.rows += part.rows;
    }
    r.gamma_per_target.push_back(proxy_divergence(tgt, pool, opts.proxy));
  }
  if (!r.gamma_per_target.empty()) r.gamma = mean(r.gamma_per_target);
  return r;
}

BoundReport bound_report(const nn::Checkpoint& ckpt, const synth::Dataset& ds, std::span<const int> sources,
                         std::span<const int> targets, const BoundOptions& opts) {
  BoundReport b;
  b.raw = divergence_report(ds, nullptr, FeatureSpace::Raw, sources, targets, opts);
  b.z_star = divergence_report(ds, &ckpt, FeatureSpace::ZStar, sources, targets, opts);
  b.epsilon_change = b.z_star.epsilon - b.raw.epsilon;
  b.gamma_change = b.z_star.gamma - b.raw.gamma;
  return b;
}

}  // namespace drift::eval
