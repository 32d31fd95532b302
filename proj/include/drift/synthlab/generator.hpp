#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "drift/kernels/kernels.hpp"
#include "drift/synthlab/signal.hpp"

namespace drift::synth {

// Uniform ranges from which per-device impairments are drawn once per device.
struct ImpairmentRanges {
  double gain_imbalance_min = 0.9;
  double gain_imbalance_max = 1.1;
  double phase_imbalance_max = 0.1;  // radians, symmetric
  double dc_max = 0.05;              // |dc|, uniform phase
  double cubic_real_min = -0.08;
  double cubic_real_max = 0.0;
  double cubic_imag_max = 0.0;       // symmetric; AM/PM term
  double freq_offset_max = 0.02;     // cycles/sample, symmetric (cfo or LO)
  std::vector<int> adc_bits_choices{10, 12};  // receivers only
};

struct ChannelLaw {
  std::size_t max_taps = 4;     // count drawn uniformly from 1..max_taps
  double tap_decay = 0.5;       // amplitude ratio between consecutive taps
  double snr_db = 20.0;
  int day = 0;                  // perturbation tag mixed into channel draws
};

struct GeneratorConfig {
  std::size_t num_transmitters = 0;  // K
  std::size_t num_receivers = 0;     // M
  std::size_t samples_per_pair = 0;
  FrameSpec frame;
  ImpairmentRanges tx_ranges;
  ImpairmentRanges rx_ranges;
  ChannelLaw channel;
  std::uint64_t seed = 0;
  bool normalize = true;
  bool equalize = true;
  // Explicit device profiles; when empty they are drawn from the ranges.
  std::vector<TransmitterProfile> tx_profiles;
  std::vector<ReceiverProfile> rx_profiles;

  void validate() const;
};

nlohmann::json to_json(const GeneratorConfig& cfg);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

struct LabeledSample {
  IQFrame x;
  int y = 0;  // transmitter, 0-based
  int d = 0;  // receiver, 0-based
};

// Struct-of-arrays container: frames are [N, 2, L] float.
struct Dataset {
  std::size_t num_transmitters = 0;
  std::size_t num_receivers = 0;
  std::size_t length = 0;
  std::vector<float> frames;
  std::vector<std::uint16_t> tx;
  std::vector<std::uint16_t> rx;

  std::size_t size() const noexcept { return tx.size(); }
  std::size_t frame_size() const noexcept { return 2 * length; }
  std::span<const float> frame(std::size_t i) const {
    return {frames.data() + i * frame_size(), frame_size()};
  }
  LabeledSample sample(std::size_t i) const;
};

// Index-level split of a dataset by receiver sets.
struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::vector<int> train_receivers;
  std::vector<int> test_receivers;
};

// Throws Config when the receiver sets overlap (and require_disjoint) or a
// side misses a transmitter.
DatasetSplit split_by_receivers(const Dataset& ds, std::span<const int> train_receivers,
                                std::span<const int> test_receivers, bool require_disjoint = true);

TransmitterProfile draw_transmitter(const ImpairmentRanges& r, Rng& rng);
ReceiverProfile draw_receiver(const ImpairmentRanges& r, Rng& rng);
ChannelRealization draw_channel(const ChannelLaw& law, Rng& rng);

// Per-device profiles as used by generate_dataset (explicit or drawn).
std::vector<TransmitterProfile> transmitter_profiles(const GeneratorConfig& cfg);
std::vector<ReceiverProfile> receiver_profiles(const GeneratorConfig& cfg);

// Random stream for one (seed, tag...) tuple.
Rng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

// One frame through the full chain; exposed for tests and tooling.
IQFrame synthesize_frame(const GeneratorConfig& cfg, const TransmitterProfile& tx,
                         const ReceiverProfile& rx, int y, int d, std::size_t index);

// K*M*samples_per_pair samples ordered by (y, d, index). Each frame draws
// from its own substream, so serial and parallel runs are bit-identical.
Dataset generate_dataset(const GeneratorConfig& cfg,
                         kernels::Exec exec = kernels::default_exec());

}  // namespace drift::synth
