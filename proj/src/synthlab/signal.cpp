#include "drift/synthlab/signal.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <string>

#include "drift/errors.hpp"

namespace drift::synth {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

bool finite(Complex z) noexcept { return std::isfinite(z.real()) && std::isfinite(z.imag()); }

Complex iq_imbalance(Complex s, double gain, double phase) noexcept {
  const double i = s.real();
  const double q = gain * (s.imag() * std::cos(phase) + s.real() * std::sin(phase));
  return {i, q};
}

Complex rotation(double freq, std::size_t t) noexcept {
  const double arg = kTwoPi * freq * static_cast<double>(t);
  return {std::cos(arg), std::sin(arg)};
}

// FFTW plans are created once per length; execution with the new-array API
// is thread-safe.
struct FftPlans {
  fftw_plan forward;
  fftw_plan backward;
};

FftPlans plans_for(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, FftPlans> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  auto* a = fftw_alloc_complex(n);
  auto* b = fftw_alloc_complex(n);
  const int len = static_cast<int>(n);
  FftPlans p{fftw_plan_dft_1d(len, a, b, FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED),
             fftw_plan_dft_1d(len, a, b, FFTW_BACKWARD, FFTW_ESTIMATE | FFTW_UNALIGNED)};
  fftw_free(a);
  fftw_free(b);
  cache.emplace(n, p);
  return p;
}

void execute(fftw_plan plan, ComplexSequence& in, ComplexSequence& out) {
  fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(in.data()),
                   reinterpret_cast<fftw_complex*>(out.data()));
}

}  // namespace

void FrameSpec::validate() const {
  require(length > 0, ErrorKind::Config, "frame length must be positive");
  require(pilot_len < length, ErrorKind::Config,
          "pilot_len (" + std::to_string(pilot_len) + ") must be smaller than frame length (" +
              std::to_string(length) + ")");
}

void TransmitterProfile::validate() const {
  require(cfo > -0.5 && cfo < 0.5, ErrorKind::Config, "transmitter cfo must lie in (-0.5, 0.5)");
  require(iq_gain_imbalance > 0.0, ErrorKind::Config, "transmitter iq gain must be positive");
  // Keeps the cubic map monotone in amplitude on |x| <= 2.
  require(std::abs(pa_cubic_coeff) <= 1.0 / 12.0, ErrorKind::Config,
          "transmitter |pa_cubic_coeff| must be <= 1/12");
}

void ReceiverProfile::validate() const {
  require(lo_offset > -0.5 && lo_offset < 0.5, ErrorKind::Config,
          "receiver lo_offset must lie in (-0.5, 0.5)");
  require(adc_bits == 0 || (adc_bits >= 4 && adc_bits <= 16), ErrorKind::Config,
          "receiver adc_bits must be 0 or in [4, 16]");
  require(iq_gain_imbalance > 0.0, ErrorKind::Config, "receiver iq gain must be positive");
  require(std::abs(lna_cubic_coeff) <= 1.0 / 12.0, ErrorKind::Config,
          "receiver |lna_cubic_coeff| must be <= 1/12");
}

void ChannelRealization::validate() const {
  require(!taps.empty() && taps.size() <= 8, ErrorKind::Config, "channel needs 1..8 taps");
  require(taps[0] != Complex{}, ErrorKind::Config, "channel taps[0] must be nonzero");
  require(noise_sigma >= 0.0, ErrorKind::Config, "channel noise_sigma must be >= 0");
}

Complex qpsk_symbol(unsigned bits) noexcept {
  const double a = 1.0 / std::numbers::sqrt2;
  return {(bits & 1u) ? -a : a, (bits & 2u) ? -a : a};
}

ComplexSequence pilot_symbols(std::size_t n) {
  // mt19937 output is fully specified by the standard, so the pattern is
  // identical on every platform.
  std::mt19937 gen(0x5eed1234u);
  ComplexSequence out(n);
  for (auto& z : out) z = qpsk_symbol(static_cast<unsigned>(gen() >> 30));
  return out;
}

ComplexSequence gen_baseband(const FrameSpec& spec, Rng& rng) {
  spec.validate();
  ComplexSequence out = pilot_symbols(spec.pilot_len);
  out.reserve(spec.length);
  while (out.size() < spec.length) out.push_back(qpsk_symbol(static_cast<unsigned>(rng() >> 62)));
  return out;
}

ComplexSequence apply_tx_impairments(std::span<const Complex> s, const TransmitterProfile& p) {
  ComplexSequence out(s.size());
  for (std::size_t t = 0; t < s.size(); ++t) {
    Complex x = iq_imbalance(s[t], p.iq_gain_imbalance, p.iq_phase_imbalance);
    x += p.dc_offset;
    x += p.pa_cubic_coeff * std::norm(x) * x;
    out[t] = p.cfo == 0.0 ? x : x * rotation(p.cfo, t);
  }
  return out;
}

ComplexSequence apply_channel(std::span<const Complex> s, const ChannelRealization& ch, Rng& rng) {
  require(!ch.taps.empty(), ErrorKind::Config, "channel needs at least one tap");
  ComplexSequence out(s.size());
  for (std::size_t t = 0; t < s.size(); ++t) {
    Complex acc{};
    for (std::size_t k = 0; k < ch.taps.size() && k <= t; ++k) acc += ch.taps[k] * s[t - k];
    out[t] = acc;
  }
  if (ch.noise_sigma > 0.0) {
    std::normal_distribution<double> n01(0.0, 1.0);
    const double comp = ch.noise_sigma / std::numbers::sqrt2;
    for (auto& z : out) {
      const double re = n01(rng);
      const double im = n01(rng);
      z += Complex{comp * re, comp * im};
    }
  }
  return out;
}

ComplexSequence quantize(std::span<const Complex> s, int bits, double full_scale) {
  ComplexSequence out(s.begin(), s.end());
  if (bits <= 0 || full_scale <= 0.0) return out;
  const double levels = std::ldexp(1.0, bits);
  const double step = 2.0 * full_scale / levels;
  const double top = full_scale - 0.5 * step;
  auto q = [&](double v) {
    const double r = step * (std::floor(v / step) + 0.5);
    return std::clamp(r, -top, top);
  };
  for (auto& z : out) z = {q(z.real()), q(z.imag())};
  return out;
}

double rms(std::span<const Complex> s) noexcept {
  if (s.empty()) return 0.0;
  double acc = 0.0;
  for (auto z : s) acc += std::norm(z);
  return std::sqrt(acc / static_cast<double>(s.size()));
}

ComplexSequence apply_rx_impairments(std::span<const Complex> s, const ReceiverProfile& p) {
  ComplexSequence out(s.size());
  for (std::size_t t = 0; t < s.size(); ++t) {
    Complex x = s[t];
    x += p.lna_cubic_coeff * std::norm(x) * x;
    if (p.lo_offset != 0.0) x *= rotation(p.lo_offset, t);
    x = iq_imbalance(x, p.iq_gain_imbalance, p.iq_phase_imbalance);
    x += p.dc_offset;
    out[t] = x;
  }
  if (p.adc_bits > 0) out = quantize(out, p.adc_bits, 4.0 * rms(out));
  return out;
}

ComplexSequence equalize(std::span<const Complex> s, std::span<const Complex> taps,
                         double floor_power) {
  require(!taps.empty(), ErrorKind::Config, "equalize: empty tap vector");
  const std::size_t n = s.size();
  require(n > 0, ErrorKind::Shape, "equalize: empty signal");
  require(taps.size() <= n, ErrorKind::Shape, "equalize: more taps than samples");
  const auto plans = plans_for(n);

  ComplexSequence buf(s.begin(), s.end()), spec(n), h(n, Complex{}), hf(n);
  std::copy(taps.begin(), taps.end(), h.begin());
  execute(plans.forward, buf, spec);
  execute(plans.forward, h, hf);
  for (std::size_t k = 0; k < n; ++k) {
    const double power = std::max(std::norm(hf[k]), floor_power);
    spec[k] = spec[k] * std::conj(hf[k]) / power;
  }
  ComplexSequence out(n);
  execute(plans.backward, spec, out);
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& z : out) z *= inv;
  return out;
}

IQFrame to_iq_frame(std::span<const Complex> s, std::size_t expected_length, bool normalize) {
  require(s.size() == expected_length, ErrorKind::Shape,
          "to_iq_frame: got " + std::to_string(s.size()) + " samples, expected " +
              std::to_string(expected_length));
  for (auto z : s) require(finite(z), ErrorKind::Numeric, "to_iq_frame: non-finite sample");
  const double r = rms(s);
  const double gain = (normalize && r >= 1e-12) ? 1.0 / r : 1.0;
  IQFrame f;
  f.length = s.size();
  f.values.resize(2 * s.size());
  for (std::size_t t = 0; t < s.size(); ++t) {
    f.values[t] = static_cast<float>(s[t].real() * gain);
    f.values[s.size() + t] = static_cast<float>(s[t].imag() * gain);
  }
  return f;
}

}  // namespace drift::synth
