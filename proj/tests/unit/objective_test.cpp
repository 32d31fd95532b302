#include <doctest.h>

#include <cmath>
#include <random>

#include "../support/oracles.hpp"
#include "drift/errors.hpp"
#include "drift/nn/grad_check.hpp"
#include "drift/nn/ops.hpp"
#include "drift/objective/losses.hpp"

using namespace drift;
using namespace drift::objective;
using nn::Tensor;
using drift::testing::random_tensor;

namespace {

std::vector<std::vector<double>> rows(const Tensor<double>& t) {
  std::vector<std::vector<double>> out(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) out[i][j] = t[i * t.dim(1) + j];
  return out;
}

double scalar(Tape<double>& tape, Var v) { return tape.value(v)[0]; }

double per_sample_ce(const Tensor<double>& logits, const std::vector<int>& y) {
  const std::size_t K = logits.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(logits[i * K + k]);
    total += -std::log(std::exp(logits[i * K + static_cast<std::size_t>(y[i])]) / z);
  }
  return total / static_cast<double>(y.size());
}

std::vector<int> random_labels(std::size_t n, int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<int> out(n);
  for (auto& v : out) v = static_cast<int>(rng() % static_cast<std::uint64_t>(classes));
  return out;
}

}  // namespace

TEST_CASE("cross-entropy terms") {
  Tape<double> tape;
  std::vector<double> onehot(3 * 4, -20.0);
  const std::vector<int> y{0, 2, 3};
  for (std::size_t i = 0; i < 3; ++i) onehot[i * 4 + static_cast<std::size_t>(y[i])] = 20.0;
  const auto sat = tape.constant(Tensor<double>({3, 4}, onehot));
  auto [a, b] = ce_loss(tape, sat, y, sat, y);
  CHECK(scalar(tape, a) < 1e-6);
  CHECK(scalar(tape, b) < 1e-6);

  const auto uni = tape.constant(Tensor<double>({5, 12}, 0.0));
  const auto uni6 = tape.constant(Tensor<double>({5, 6}, 0.0));
  const std::vector<int> y5{0, 11, 3, 4, 7};
  const std::vector<int> d5{0, 5, 1, 2, 3};
  auto [u1, u2] = ce_loss(tape, uni, y5, uni6, d5);
  CHECK(scalar(tape, u1) == doctest::Approx(std::log(12.0)).epsilon(1e-14));
  CHECK(scalar(tape, u1) == doctest::Approx(2.4849).epsilon(1e-4));
  CHECK(scalar(tape, u2) == doctest::Approx(std::log(6.0)).epsilon(1e-14));
  CHECK(scalar(tape, grl_loss(tape, nn::grl(tape, uni6, 1.0), d5)) == doctest::Approx(1.7918).epsilon(1e-4));

  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto lt = random_tensor({9, 5}, 100 + s, -4.0, 4.0);
    const auto lr = random_tensor({9, 3}, 200 + s, -4.0, 4.0);
    const auto ly = random_labels(9, 5, s), ld = random_labels(9, 3, s + 50);
    auto [t, r] = ce_loss(tape, tape.constant(lt), ly, tape.constant(lr), ld);
    CHECK(scalar(tape, t) == doctest::Approx(per_sample_ce(lt, ly)).epsilon(1e-12));
    CHECK(scalar(tape, r) == doctest::Approx(per_sample_ce(lr, ld)).epsilon(1e-12));
    // The reversal is invisible in the forward value.
    const auto lv = tape.constant(lr);
    CHECK(scalar(tape, grl_loss(tape, nn::grl(tape, lv, 0.3), ld)) ==
          scalar(tape, nn::softmax_cross_entropy(tape, lv, ld)));
  }

  const std::vector<int> bad{0, 4, 1};
  try {
    ce_loss(tape, sat, bad, sat, y);
    FAIL("expected a label error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Label);
  }
}

TEST_CASE("reversed discriminator gradient on a two-layer net") {
  nn::ParamStore<double> ps;
  ps.add("enc.w", random_tensor({6, 5}, 1));
  ps.add("enc.b", random_tensor({6}, 2));
  ps.add("disc.w", random_tensor({3, 6}, 3));
  ps.add("disc.b", random_tensor({3}, 4));
  const auto x = random_tensor({7, 5}, 5);
  const auto d = random_labels(7, 3, 6);
  for (double lambda : {0.0, 0.25, 1.0, 3.0}) {
    auto grads = [&](bool with_grl) {
      Tape<double> t;
      Var h = nn::relu(t, nn::dense(t, t.constant(x), t.parameter(ps, 0), t.parameter(ps, 1)));
      if (with_grl) h = nn::grl(t, h, lambda);
      return t.backward(grl_loss(t, nn::dense(t, h, t.parameter(ps, 2), t.parameter(ps, 3)), d));
    };
    const auto r = grads(true), p = grads(false);
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t i = 0; i < r[k].size(); ++i) CHECK(r[k][i] == doctest::Approx(-lambda * p[k][i]).epsilon(1e-12));
    for (std::size_t k = 2; k < 4; ++k) CHECK(r[k].storage() == p[k].storage());
  }
}

TEST_CASE("center loss") {
  Tape<double> tape;
  const std::vector<int> one{0, 0};
  CHECK(scalar(tape, center_loss(tape, tape.constant(Tensor<double>({2, 1}, {0, 2})), one)) == 1.0);

  const auto same = tape.constant(Tensor<double>({4, 2}, {1, 2, 5, 5, 1, 2, 5, 5}));
  const std::vector<int> d{0, 1, 0, 1};
  CHECK(scalar(tape, center_loss(tape, same, d)) == 0.0);

  // Domains absent from the batch contribute nothing.
  const std::vector<int> sparse{4, 4};
  CHECK(scalar(tape, center_loss(tape, tape.constant(Tensor<double>({2, 1}, {0, 2})), sparse)) == 1.0);

  for (std::uint64_t s = 0; s < 100; ++s) {
    const std::size_t B = 2 + s % 15, F = 1 + s % 9;
    const auto z = random_tensor({B, F}, 1000 + s, -3.0, 3.0);
    const auto dd = random_labels(B, 1 + static_cast<int>(s % 5), s);
    const double got = scalar(tape, center_loss(tape, tape.constant(z), dd));
    CHECK(std::abs(got - drift::testing::center_oracle(rows(z), dd)) < 1e-6);
    CHECK(got >= 0.0);

    // A constant shift of one domain is absorbed by its centroid.
    auto shifted = z;
    for (std::size_t i = 0; i < B; ++i)
      if (dd[i] == dd[0])
        for (std::size_t j = 0; j < F; ++j) shifted[i * F + j] += 2.5 + static_cast<double>(j);
    CHECK(std::abs(scalar(tape, center_loss(tape, tape.constant(shifted), dd)) - got) < 1e-9);
  }
}

TEST_CASE("center loss gradients") {
  std::uint64_t seed = 30;
  for (std::size_t B : {2, 5, 8, 13, 16}) {
    const auto d = random_labels(B, 3, seed);
    for (bool detach : {false, true}) {
      const auto rep = nn::grad_check(
          [&](Tape<double>& t, Var z) { return center_loss(t, z, d, detach); }, random_tensor({B, 6}, ++seed));
      CHECK(rep.passed);
    }
  }
}

TEST_CASE("separation loss") {
  Tape<double> tape;
  const auto a = tape.constant(Tensor<double>({1, 2}, {1, 0}));
  const auto b = tape.constant(Tensor<double>({1, 2}, {0, 1}));
  CHECK(scalar(tape, separation_loss(tape, a, b)) == -2.0);
  CHECK(scalar(tape, separation_loss(tape, a, a)) == 0.0);
  CHECK_THROWS_AS(separation_loss(tape, a, tape.constant(Tensor<double>({1, 3}))), Error);

  for (std::uint64_t s = 0; s < 100; ++s) {
    const std::size_t B = 1 + s % 11, F = 1 + s % 7;
    const auto zs = random_tensor({B, F}, 2000 + s, -3.0, 3.0);
    const auto zp = random_tensor({B, F}, 3000 + s, -3.0, 3.0);
    const double got = scalar(tape, separation_loss(tape, tape.constant(zs), tape.constant(zp)));
    CHECK(std::abs(got - drift::testing::separation_oracle(rows(zs), rows(zp))) < 1e-6);
    CHECK(got <= 0.0);

    // Moving one pair apart strictly decreases the loss.
    auto moved = zs;
    const double dir = zs[0] >= zp[0] ? 1.0 : -1.0;
    moved[0] += dir * 0.5;
    CHECK(scalar(tape, separation_loss(tape, tape.constant(moved), tape.constant(zp))) < got);
  }
}

TEST_CASE("separation loss feature clamp") {
  Tape<double> tape;
  const auto zs = random_tensor({6, 4}, 1, -5.0, 5.0);
  const auto zp = random_tensor({6, 4}, 2, -5.0, 5.0);
  const auto vs = tape.constant(zs), vp = tape.constant(zp);
  CHECK(scalar(tape, separation_loss(tape, vs, vp, 0.0)) == scalar(tape, separation_loss(tape, vs, vp)));

  const double c = 1.5;
  const double clamped = scalar(tape, separation_loss(tape, vs, vp, c));
  CHECK(clamped >= -4.0 * c * c);
  // Far-apart inputs hit the bound exactly when each pair is antipodal.
  const auto far = tape.constant(Tensor<double>({1, 2}, {100.0, 0.0}));
  const auto anti = tape.constant(Tensor<double>({1, 2}, {-100.0, 0.0}));
  CHECK(scalar(tape, separation_loss(tape, far, anti, c)) == doctest::Approx(-4.0 * c * c));
  // Rows already inside the ball are unchanged.
  const auto small_a = tape.constant(Tensor<double>({1, 2}, {0.5, 0.0}));
  const auto small_b = tape.constant(Tensor<double>({1, 2}, {0.0, 0.5}));
  CHECK(scalar(tape, separation_loss(tape, small_a, small_b, c)) == scalar(tape, separation_loss(tape, small_a, small_b)));

  CHECK_THROWS_AS(separation_loss(tape, vs, vp, -1.0), Error);
  CHECK_THROWS_AS(separation_loss(tape, vs, vp, std::nan("")), Error);

  nn::ParamStore<double> ps;
  ps.add("a", zs);
  ps.add("b", zp);
  const auto rep = nn::grad_check(
      [&](Tape<double>& t, nn::ParamStore<double>& p) {
        return separation_loss(t, t.parameter(p, 0), t.parameter(p, 1), c);
      },
      ps);
  CHECK(rep.passed);
}

TEST_CASE("total loss composition") {
  Tape<double> tape;
  auto k = [&](double v) { return tape.constant(Tensor<double>::scalar(v)); };
  const LossTerms parts{k(1), k(1), k(2), k(3), k(-4)};
  CHECK(kDefaultWeights == Weights{1.0, 0.01, 0.02});
  const auto t = total_loss(tape, parts, kDefaultWeights);
  CHECK(scalar(tape, t.total) == doctest::Approx(3.95).epsilon(1e-15));
  CHECK(t.breakdown.total == scalar(tape, t.total));
  CHECK(t.breakdown.identity_holds<double>());
  CHECK(t.breakdown.ce_tx == 1.0);
  CHECK(t.breakdown.mse == -4.0);

  const auto zero = total_loss(tape, parts, Weights{});
  CHECK(scalar(tape, zero.total) == 2.0);

  // Absent terms count as zero.
  const auto partial = total_loss(tape, LossTerms{k(0.5), Var{}, Var{}, Var{}, Var{}}, kDefaultWeights);
  CHECK(scalar(tape, partial.total) == 0.5);

  try {
    total_loss(tape, parts, Weights{1.0, -0.01, 0.02});
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }

  // Identity holds in float for random parts.
  Tape<float> tf;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto v = random_tensor<float>({5}, s, -10.0, 10.0);
    auto kf = [&](std::size_t i) { return tf.constant(Tensor<float>::scalar(v[i])); };
    const auto r = total_loss(tf, LossTerms{kf(0), kf(1), kf(2), kf(3), kf(4)}, Weights{0.7, 0.013, 0.021});
    CHECK(r.breakdown.identity_holds<float>());
    CHECK(tf.value(r.total)[0] == r.breakdown.recompute_total<float>());
  }
}

TEST_CASE("whole objective gradient on a toy network") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto toy = drift::testing::make_toy_drift(seed);
    model::DriftNet<double> net(toy.cfg);
    nn::GradCheckOptions opts;
    opts.tolerance = 1e-3;
    opts.max_coords = 20;
    opts.seed = seed;
    const auto rep = nn::grad_check(
        [&](Tape<double>& t, nn::ParamStore<double>&) { return drift::testing::toy_drift_loss(t, net, toy); },
        net.params(), opts);
    INFO("seed " << seed << " max rel " << rep.max_rel_error);
    CHECK(rep.passed);
    CHECK(rep.grl_exempted);
    CHECK(rep.checked == 20);
  }
}
