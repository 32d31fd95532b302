#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "drift/errors.hpp"
#include "drift/eval/probes.hpp"
#include "drift/kernels/kernels.hpp"
#include "drift/synthlab/dataset_io.hpp"
#include "drift/synthlab/generator.hpp"
#include "drift/synthlab/signal.hpp"

using namespace drift;
using namespace drift::synth;

namespace {

double max_err(std::span<const Complex> a, std::span<const Complex> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

ComplexSequence random_seq(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g;
  ComplexSequence s(n);
  for (auto& v : s) v = {g(rng), g(rng)};
  return s;
}

GeneratorConfig small_config() {
  GeneratorConfig c;
  c.num_transmitters = 3;
  c.num_receivers = 2;
  c.samples_per_pair = 4;
  c.frame.length = 64;
  c.frame.pilot_len = 8;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("baseband length, alphabet and power") {
  FrameSpec spec;
  Rng rng(1);
  const auto s = gen_baseband(spec, rng);
  CHECK(s.size() == 256);
  const double r = 1.0 / std::sqrt(2.0);
  for (const auto& v : s) {
    CHECK(std::abs(std::abs(v.real()) - r) < 1e-15);
    CHECK(std::abs(std::abs(v.imag()) - r) < 1e-15);
  }
  const auto pilot = pilot_symbols(spec.pilot_len);
  for (std::size_t t = 0; t < spec.pilot_len; ++t) CHECK(s[t] == pilot[t]);

  FrameSpec big;
  big.length = 100000;
  big.pilot_len = 32;
  Rng rng2(2);
  const auto b = gen_baseband(big, rng2);
  double p = 0.0;
  for (const auto& v : b) p += std::norm(v);
  CHECK(std::abs(p / b.size() - 1.0) < 0.01);
}

TEST_CASE("frame spec validation") {
  FrameSpec s;
  s.pilot_len = s.length;
  CHECK_THROWS_AS(s.validate(), Error);
}

TEST_CASE("transmitter impairments") {
  const auto s = random_seq(16, 3);
  CHECK(apply_tx_impairments(s, TransmitterProfile{}) == s);

  TransmitterProfile dc;
  dc.dc_offset = {0.1, 0.0};
  const ComplexSequence zeros(5);
  for (const auto& v : apply_tx_impairments(zeros, dc)) CHECK(v == Complex{0.1, 0.0});

  TransmitterProfile pa;
  pa.pa_cubic_coeff = {-0.05, 0.0};
  const ComplexSequence one{Complex{1.0, 0.0}};
  CHECK(std::abs(apply_tx_impairments(one, pa)[0] - Complex{0.95, 0.0}) < 1e-15);

  // IQ imbalance: I' = Re s, Q' = g (Im s cos phi + Re s sin phi).
  TransmitterProfile iq;
  iq.iq_gain_imbalance = 1.1;
  iq.iq_phase_imbalance = 0.2;
  const auto y = apply_tx_impairments(s, iq);
  for (std::size_t t = 0; t < s.size(); ++t) {
    CHECK(y[t].real() == doctest::Approx(s[t].real()).epsilon(1e-14));
    const double q = 1.1 * (s[t].imag() * std::cos(0.2) + s[t].real() * std::sin(0.2));
    CHECK(y[t].imag() == doctest::Approx(q).epsilon(1e-14));
  }

  TransmitterProfile cfo;
  cfo.cfo = 0.25;
  const ComplexSequence ones(4, Complex{1.0, 0.0});
  const auto rot = apply_tx_impairments(ones, cfo);
  const ComplexSequence want{{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
  CHECK(max_err(rot, want) < 1e-15);
}

TEST_CASE("channel convolution and noise") {
  Rng rng(1);
  const auto s = random_seq(32, 4);
  ChannelRealization id;
  CHECK(apply_channel(s, id, rng) == s);

  ChannelRealization two;
  two.taps = {{1.0, 0.0}, {0.5, 0.0}};
  const ComplexSequence x{{1, 0}, {0, 0}, {0, 0}};
  const ComplexSequence want{{1, 0}, {0.5, 0}, {0, 0}};
  CHECK(max_err(apply_channel(x, two, rng), want) == 0.0);

  Rng a(9), b(9);
  ChannelRealization noisy = two;
  noisy.noise_sigma = 0.3;
  CHECK(apply_channel(s, noisy, a) == apply_channel(s, noisy, b));
  CHECK(apply_channel(s, two, rng) == apply_channel(s, two, rng));

  // Complex noise power matches sigma^2.
  const ComplexSequence zeros(200000);
  Rng r(3);
  ChannelRealization n;
  n.noise_sigma = 0.5;
  const auto y = apply_channel(zeros, n, r);
  double p = 0.0;
  for (const auto& v : y) p += std::norm(v);
  CHECK(p / y.size() == doctest::Approx(0.25).epsilon(0.02));

  ChannelRealization bad;
  bad.taps = {{0.0, 0.0}, {1.0, 0.0}};
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("receiver impairments") {
  const auto s = random_seq(16, 5);
  CHECK(apply_rx_impairments(s, ReceiverProfile{}) == s);

  ReceiverProfile lo;
  lo.lo_offset = 0.25;
  const ComplexSequence ones(4, Complex{1.0, 0.0});
  const ComplexSequence want{{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
  CHECK(max_err(apply_rx_impairments(ones, lo), want) < 1e-15);

  ReceiverProfile lna;
  lna.lna_cubic_coeff = {-0.05, 0.0};
  CHECK(std::abs(apply_rx_impairments(ComplexSequence{{1.0, 0.0}}, lna)[0] - Complex{0.95, 0.0}) < 1e-15);

  ReceiverProfile dc;
  dc.dc_offset = {0.0, -0.2};
  CHECK(apply_rx_impairments(ComplexSequence(3), dc)[2] == Complex{0.0, -0.2});

  ReceiverProfile bits;
  bits.adc_bits = 3;
  CHECK_THROWS_AS(bits.validate(), Error);
  bits.adc_bits = 17;
  CHECK_THROWS_AS(bits.validate(), Error);
}

TEST_CASE("quantizer is idempotent on its grid") {
  const auto s = random_seq(512, 6);
  const double A = 4.0 * rms(s);
  const auto q1 = quantize(s, 8, A);
  CHECK(quantize(q1, 8, A) == q1);
  // Mid-rise levels: odd multiples of half a step, clipped to the range.
  const double step = 2.0 * A / 256.0;
  for (const auto& v : q1) {
    const double k = v.real() / step - 0.5;
    CHECK(std::abs(k - std::round(k)) < 1e-9);
    CHECK(std::abs(v.real()) < A);
  }
  ReceiverProfile p;
  p.adc_bits = 8;
  const auto y = apply_rx_impairments(s, p);
  CHECK(y == quantize(s, 8, A));
}

TEST_CASE("equalization") {
  const auto s = random_seq(256, 7);
  const ComplexSequence unit{{1.0, 0.0}};
  CHECK(max_err(equalize(s, unit), s) < 1e-9);

  const ComplexSequence two{{2.0, 0.0}};
  auto half = s;
  for (auto& v : half) v /= 2.0;
  CHECK(max_err(equalize(s, two), half) < 1e-9);

  // Linear vs circular convolution differ only at the head; excluded by the
  // pilot guard.
  Rng rng(1);
  ChannelRealization ch;
  ch.taps = {{1.0, 0.0}, {0.3, 0.0}};
  const auto y = equalize(apply_channel(s, ch, rng), ch.taps);
  const std::size_t guard = 32;
  CHECK(max_err(std::span(y).subspan(guard), std::span(s).subspan(guard)) < 1e-6);
}

TEST_CASE("iq frame") {
  const ComplexSequence one{{1.0, 2.0}};
  const auto raw = to_iq_frame(one, 1, false);
  CHECK(raw.values == std::vector<float>{1.0f, 2.0f});

  const auto s = random_seq(256, 8);
  const auto f = to_iq_frame(s, 256);
  double p = 0.0;
  for (float v : f.values) p += double(v) * v;
  CHECK(std::abs(std::sqrt(p / 256.0) - 1.0) < 1e-6);

  const auto z = to_iq_frame(ComplexSequence(8), 8);
  for (float v : z.values) CHECK(v == 0.0f);
  CHECK_THROWS_AS(to_iq_frame(s, 128), Error);
}

TEST_CASE("null-impairment chain reproduces the baseband") {
  FrameSpec spec;
  Rng rng(11);
  const auto s = gen_baseband(spec, rng);
  Rng ch_rng(12);
  ChannelRealization ch;
  const auto y = equalize(apply_rx_impairments(apply_channel(apply_tx_impairments(s, {}), ch, ch_rng), {}), ch.taps);
  const auto f = to_iq_frame(y, spec.length);
  const auto ref = to_iq_frame(s, spec.length);
  double m = 0.0;
  for (std::size_t i = 0; i < f.values.size(); ++i) m = std::max(m, double(std::abs(f.values[i] - ref.values[i])));
  CHECK(m < 1e-6);
}

TEST_CASE("dataset size, label balance and determinism") {
  auto c = small_config();
  c.num_transmitters = 2;
  c.num_receivers = 2;
  c.samples_per_pair = 1;
  const auto tiny = generate_dataset(c);
  REQUIRE(tiny.size() == 4);
  std::multiset<std::pair<int, int>> labels;
  for (std::size_t i = 0; i < tiny.size(); ++i) labels.insert({tiny.tx[i], tiny.rx[i]});
  CHECK(labels == std::multiset<std::pair<int, int>>{{0, 0}, {0, 1}, {1, 0}, {1, 1}});

  const auto cfg = small_config();
  const auto a = generate_dataset(cfg, kernels::Exec::Serial);
  const auto b = generate_dataset(cfg, kernels::Exec::Parallel);
  CHECK(a.size() == 3 * 2 * 4);
  CHECK(a.frames == b.frames);
  CHECK(a.tx == b.tx);
  CHECK(a.rx == b.rx);
  std::map<std::pair<int, int>, int> counts;
  for (std::size_t i = 0; i < a.size(); ++i) counts[{a.tx[i], a.rx[i]}]++;
  CHECK(counts.size() == 6);
  for (const auto& [k, n] : counts) CHECK(n == 4);

  auto other = cfg;
  other.seed = 6;
  CHECK(generate_dataset(other).frames != a.frames);
}

TEST_CASE("many-signal sized config counts") {
  auto c = small_config();
  c.num_transmitters = 12;
  c.num_receivers = 6;
  c.samples_per_pair = 1000;
  c.validate();
  CHECK(c.num_transmitters * c.num_receivers * c.samples_per_pair == 72000);
  // A reduced frame keeps the full-count run fast.
  c.frame.length = 16;
  c.frame.pilot_len = 4;
  CHECK(generate_dataset(c).size() == 72000);
}

TEST_CASE("generator config validation and json round trip") {
  auto c = small_config();
  c.num_transmitters = 1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small_config();
  c.samples_per_pair = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small_config();
  c.tx_profiles.resize(3);
  c.tx_profiles[1].cfo = 0.01;
  const auto back = generator_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(generate_dataset(back).frames == generate_dataset(c).frames);
}

TEST_CASE("receiver split") {
  const auto ds = generate_dataset(small_config());
  const std::vector<int> tr{0}, te{1};
  const auto sp = split_by_receivers(ds, tr, te);
  CHECK(sp.train.size() == 12);
  CHECK(sp.test.size() == 12);
  for (auto i : sp.train) CHECK(ds.rx[i] == 0);
  for (auto i : sp.test) CHECK(ds.rx[i] == 1);
  const std::vector<int> both{0, 1};
  CHECK_THROWS_AS(split_by_receivers(ds, both, te), Error);
}

TEST_CASE("dataset container round trip") {
  const auto cfg = small_config();
  const auto ds = generate_dataset(cfg);
  const auto bytes = encode_dataset(ds);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "DRIFTDS1");
  CHECK(bytes.size() == 8 + 4 * 4 + 8 + ds.size() * (4 + 4 * 2 * 64));
  const auto back = decode_dataset(bytes, "mem");
  CHECK(back.frames == ds.frames);
  CHECK(back.tx == ds.tx);
  CHECK(back.rx == ds.rx);

  auto cut = bytes;
  cut.resize(cut.size() - 3);
  CHECK_THROWS_AS(decode_dataset(cut, "mem"), Error);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_dataset(bad, "mem"), Error);

  const auto dir = std::filesystem::temp_directory_path() / "drift_synth_test";
  std::filesystem::create_directories(dir);
  save_dataset(dir / "ds.bin", ds, cfg);
  CHECK(std::filesystem::exists(sidecar_path(dir / "ds.bin")));
  CHECK(load_dataset(dir / "ds.bin").frames == ds.frames);
  std::filesystem::remove_all(dir);
}

TEST_CASE("strongly impaired transmitters are linearly separable") {
  GeneratorConfig c;
  c.num_transmitters = 2;
  c.num_receivers = 2;
  c.samples_per_pair = 200;
  c.seed = 3;
  c.tx_profiles.resize(2);
  c.tx_profiles[1].iq_gain_imbalance = 1.3;
  c.tx_profiles[1].iq_phase_imbalance = 0.3;
  c.tx_profiles[1].dc_offset = {0.3, 0.0};
  c.rx_profiles.resize(2);
  const auto ds = generate_dataset(c);
  eval::Features f{0, ds.frame_size(), {}};
  std::vector<int> y;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.rx[i] != 0) continue;
    const auto fr = ds.frame(i);
    f.values.insert(f.values.end(), fr.begin(), fr.end());
    f.rows += 1;
    y.push_back(ds.tx[i]);
  }
  eval::ProbeOptions po;
  po.seed = 1;
  CHECK(eval::linear_probe_accuracy(f, y, 2, po) > 0.9);
}
