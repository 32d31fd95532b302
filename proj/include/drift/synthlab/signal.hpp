#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace drift::synth {

using Complex = std::complex<double>;
using ComplexSequence = std::vector<Complex>;
using Rng = std::mt19937_64;

enum class Modulation { QPSK };

struct FrameSpec {
  std::size_t length = 256;
  Modulation modulation = Modulation::QPSK;
  std::size_t pilot_len = 32;

  // Throws Config on pilot_len >= length or length == 0.
  void validate() const;
};

// Impairments applied at the transmitter, in order: IQ imbalance, DC offset,
// memoryless cubic PA, carrier frequency offset.
struct TransmitterProfile {
  double iq_gain_imbalance = 1.0;   // Q-branch gain ratio
  double iq_phase_imbalance = 0.0;  // radians
  Complex dc_offset{};
  Complex pa_cubic_coeff{};         // y = x + a3 |x|^2 x
  double cfo = 0.0;                 // cycles/sample, (-0.5, 0.5)

  void validate() const;
};

// Impairments applied at the receiver, in order: cubic LNA, LO offset
// rotation, IQ imbalance, DC offset, ADC quantization.
struct ReceiverProfile {
  Complex lna_cubic_coeff{};
  double iq_gain_imbalance = 1.0;
  double iq_phase_imbalance = 0.0;
  Complex dc_offset{};
  double lo_offset = 0.0;  // cycles/sample, (-0.5, 0.5)
  int adc_bits = 0;        // 0 disables quantization, otherwise 4..16

  void validate() const;
};

struct ChannelRealization {
  ComplexSequence taps{Complex{1.0, 0.0}};  // at most 8, taps[0] != 0
  double noise_sigma = 0.0;                 // complex std: E|n|^2 = sigma^2

  void validate() const;
};

// Two-row real frame: row 0 in-phase, row 1 quadrature.
struct IQFrame {
  std::size_t length = 0;
  std::vector<float> values;  // [2, length] row-major

  float i(std::size_t t) const { return values[t]; }
  float q(std::size_t t) const { return values[length + t]; }
};

// The known pilot prefix: a fixed QPSK pattern independent of any seed.
ComplexSequence pilot_symbols(std::size_t n);

// Unit-power QPSK point for a 2-bit index.
Complex qpsk_symbol(unsigned bits) noexcept;

ComplexSequence gen_baseband(const FrameSpec& spec, Rng& rng);

ComplexSequence apply_tx_impairments(std::span<const Complex> s, const TransmitterProfile& p);

// Same-length linear convolution (tail truncated) plus circular complex
// Gaussian noise. With noise_sigma == 0 the rng is not touched.
ComplexSequence apply_channel(std::span<const Complex> s, const ChannelRealization& ch, Rng& rng);

ComplexSequence apply_rx_impairments(std::span<const Complex> s, const ReceiverProfile& p);

// Uniform mid-rise quantizer of I and Q over [-full_scale, full_scale].
ComplexSequence quantize(std::span<const Complex> s, int bits, double full_scale);

// Zero-forcing in the frequency domain: FFT, divide by the channel response
// with |H|^2 floored at floor_power, inverse FFT.
ComplexSequence equalize(std::span<const Complex> s, std::span<const Complex> taps,
                         double floor_power = 1e-6);

double rms(std::span<const Complex> s) noexcept;

// Splits into I/Q rows; scales to unit RMS when normalize is set and the RMS
// is at least 1e-12. Throws Shape when s.size() != expected_length.
IQFrame to_iq_frame(std::span<const Complex> s, std::size_t expected_length, bool normalize = true);

}  // namespace drift::synth
