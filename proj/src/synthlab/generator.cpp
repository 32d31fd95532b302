#include "drift/synthlab/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <string>

#include "drift/errors.hpp"

namespace drift::synth {

namespace {

constexpr std::uint64_t kTagTx = 0x5478;       // "Tx"
constexpr std::uint64_t kTagRx = 0x5278;       // "Rx"
constexpr std::uint64_t kTagFrame = 0x4672;    // "Fr"

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Complex random_offset(Rng& rng, double max_abs) {
  const double mag = uniform(rng, 0.0, max_abs);
  const double ph = uniform(rng, -std::numbers::pi, std::numbers::pi);
  return std::polar(mag, ph);
}

nlohmann::json complex_json(Complex z) { return nlohmann::json::array({z.real(), z.imag()}); }
Complex complex_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

nlohmann::json ranges_json(const ImpairmentRanges& r) {
  return {{"gain_imbalance_min", r.gain_imbalance_min},
          {"gain_imbalance_max", r.gain_imbalance_max},
          {"phase_imbalance_max", r.phase_imbalance_max},
          {"dc_max", r.dc_max},
          {"cubic_real_min", r.cubic_real_min},
          {"cubic_real_max", r.cubic_real_max},
          {"cubic_imag_max", r.cubic_imag_max},
          {"freq_offset_max", r.freq_offset_max},
          {"adc_bits_choices", r.adc_bits_choices}};
}

ImpairmentRanges ranges_from(const nlohmann::json& j) {
  ImpairmentRanges r;
  r.gain_imbalance_min = j.at("gain_imbalance_min").get<double>();
  r.gain_imbalance_max = j.at("gain_imbalance_max").get<double>();
  r.phase_imbalance_max = j.at("phase_imbalance_max").get<double>();
  r.dc_max = j.at("dc_max").get<double>();
  r.cubic_real_min = j.at("cubic_real_min").get<double>();
  r.cubic_real_max = j.at("cubic_real_max").get<double>();
  r.cubic_imag_max = j.at("cubic_imag_max").get<double>();
  r.freq_offset_max = j.at("freq_offset_max").get<double>();
  r.adc_bits_choices = j.at("adc_bits_choices").get<std::vector<int>>();
  return r;
}

void validate_ranges(const ImpairmentRanges& r, const char* who) {
  const std::string w(who);
  require(r.gain_imbalance_min > 0.0 && r.gain_imbalance_min <= r.gain_imbalance_max,
          ErrorKind::Config, w + " gain imbalance range invalid");
  require(r.phase_imbalance_max >= 0.0 && r.dc_max >= 0.0 && r.cubic_imag_max >= 0.0,
          ErrorKind::Config, w + " impairment magnitudes must be >= 0");
  require(r.cubic_real_min <= r.cubic_real_max, ErrorKind::Config, w + " cubic range invalid");
  require(std::hypot(std::max(std::abs(r.cubic_real_min), std::abs(r.cubic_real_max)),
                     r.cubic_imag_max) <= 1.0 / 12.0,
          ErrorKind::Config, w + " cubic coefficient range exceeds the monotone bound 1/12");
  require(r.freq_offset_max >= 0.0 && r.freq_offset_max < 0.5, ErrorKind::Config,
          w + " frequency offset range must lie in [0, 0.5)");
  for (int b : r.adc_bits_choices) {
    require(b == 0 || (b >= 4 && b <= 16), ErrorKind::Config, w + " adc bits must be 0 or 4..16");
  }
}

}  // namespace

Rng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::vector<std::uint32_t> words;
  words.push_back(static_cast<std::uint32_t>(seed));
  words.push_back(static_cast<std::uint32_t>(seed >> 32));
  for (auto t : tags) {
    words.push_back(static_cast<std::uint32_t>(t));
    words.push_back(static_cast<std::uint32_t>(t >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

void GeneratorConfig::validate() const {
  require(num_transmitters >= 2, ErrorKind::Config, "generator: K must be >= 2");
  require(num_receivers >= 2, ErrorKind::Config, "generator: M must be >= 2");
  require(samples_per_pair >= 1, ErrorKind::Config, "generator: samples_per_pair must be >= 1");
  require(num_transmitters <= 65535 && num_receivers <= 65535, ErrorKind::Config,
          "generator: K and M must fit in 16 bits");
  frame.validate();
  validate_ranges(tx_ranges, "tx");
  validate_ranges(rx_ranges, "rx");
  require(!rx_ranges.adc_bits_choices.empty(), ErrorKind::Config, "rx adc_bits_choices is empty");
  require(channel.max_taps >= 1 && channel.max_taps <= 8, ErrorKind::Config,
          "channel max_taps must be in 1..8");
  require(channel.tap_decay > 0.0 && channel.tap_decay < 1.0, ErrorKind::Config,
          "channel tap_decay must lie in (0, 1)");
  require(tx_profiles.empty() || tx_profiles.size() == num_transmitters, ErrorKind::Config,
          "generator: tx_profiles must be empty or have K entries");
  require(rx_profiles.empty() || rx_profiles.size() == num_receivers, ErrorKind::Config,
          "generator: rx_profiles must be empty or have M entries");
  for (const auto& p : tx_profiles) p.validate();
  for (const auto& p : rx_profiles) p.validate();
}

nlohmann::json to_json(const GeneratorConfig& cfg) {
  nlohmann::json j;
  j["K"] = cfg.num_transmitters;
  j["M"] = cfg.num_receivers;
  j["samples_per_pair"] = cfg.samples_per_pair;
  j["frame_length"] = cfg.frame.length;
  j["pilot_len"] = cfg.frame.pilot_len;
  j["modulation"] = "QPSK";
  j["tx_ranges"] = ranges_json(cfg.tx_ranges);
  j["rx_ranges"] = ranges_json(cfg.rx_ranges);
  j["channel"] = {{"max_taps", cfg.channel.max_taps},
                  {"tap_decay", cfg.channel.tap_decay},
                  {"snr_db", cfg.channel.snr_db},
                  {"day", cfg.channel.day}};
  j["seed"] = cfg.seed;
  j["normalize"] = cfg.normalize;
  j["equalize"] = cfg.equalize;
  j["tx_profiles"] = nlohmann::json::array();
  for (const auto& p : cfg.tx_profiles) {
    j["tx_profiles"].push_back({{"iq_gain_imbalance", p.iq_gain_imbalance},
                                {"iq_phase_imbalance", p.iq_phase_imbalance},
                                {"dc_offset", complex_json(p.dc_offset)},
                                {"pa_cubic_coeff", complex_json(p.pa_cubic_coeff)},
                                {"cfo", p.cfo}});
  }
  j["rx_profiles"] = nlohmann::json::array();
  for (const auto& p : cfg.rx_profiles) {
    j["rx_profiles"].push_back({{"lna_cubic_coeff", complex_json(p.lna_cubic_coeff)},
                                {"iq_gain_imbalance", p.iq_gain_imbalance},
                                {"iq_phase_imbalance", p.iq_phase_imbalance},
                                {"dc_offset", complex_json(p.dc_offset)},
                                {"lo_offset", p.lo_offset},
                                {"adc_bits", p.adc_bits}});
  }
  return j;
}

GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  GeneratorConfig cfg;
  try {
    cfg.num_transmitters = j.at("K").get<std::size_t>();
    cfg.num_receivers = j.at("M").get<std::size_t>();
    cfg.samples_per_pair = j.at("samples_per_pair").get<std::size_t>();
    cfg.frame.length = j.at("frame_length").get<std::size_t>();
    cfg.frame.pilot_len = j.at("pilot_len").get<std::size_t>();
    require(j.at("modulation").get<std::string>() == "QPSK", ErrorKind::Config,
            "generator: only QPSK modulation is supported");
    cfg.tx_ranges = ranges_from(j.at("tx_ranges"));
    cfg.rx_ranges = ranges_from(j.at("rx_ranges"));
    const auto& ch = j.at("channel");
    cfg.channel.max_taps = ch.at("max_taps").get<std::size_t>();
    cfg.channel.tap_decay = ch.at("tap_decay").get<double>();
    cfg.channel.snr_db = ch.at("snr_db").get<double>();
    cfg.channel.day = ch.at("day").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.normalize = j.at("normalize").get<bool>();
    cfg.equalize = j.at("equalize").get<bool>();
    for (const auto& p : j.at("tx_profiles")) {
      TransmitterProfile t;
      t.iq_gain_imbalance = p.at("iq_gain_imbalance").get<double>();
      t.iq_phase_imbalance = p.at("iq_phase_imbalance").get<double>();
      t.dc_offset = complex_from(p.at("dc_offset"));
      t.pa_cubic_coeff = complex_from(p.at("pa_cubic_coeff"));
      t.cfo = p.at("cfo").get<double>();
      cfg.tx_profiles.push_back(t);
    }
    for (const auto& p : j.at("rx_profiles")) {
      ReceiverProfile r;
      r.lna_cubic_coeff = complex_from(p.at("lna_cubic_coeff"));
      r.iq_gain_imbalance = p.at("iq_gain_imbalance").get<double>();
      r.iq_phase_imbalance = p.at("iq_phase_imbalance").get<double>();
      r.dc_offset = complex_from(p.at("dc_offset"));
      r.lo_offset = p.at("lo_offset").get<double>();
      r.adc_bits = p.at("adc_bits").get<int>();
      cfg.rx_profiles.push_back(r);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Config, std::string("generator config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

LabeledSample Dataset::sample(std::size_t i) const {
  require(i < size(), ErrorKind::Usage, "dataset index out of range");
  LabeledSample s;
  s.x.length = length;
  auto f = frame(i);
  s.x.values.assign(f.begin(), f.end());
  s.y = tx[i];
  s.d = rx[i];
  return s;
}

DatasetSplit split_by_receivers(const Dataset& ds, std::span<const int> train_receivers,
                                std::span<const int> test_receivers, bool require_disjoint) {
  const std::set<int> tr(train_receivers.begin(), train_receivers.end());
  const std::set<int> te(test_receivers.begin(), test_receivers.end());
  require(!tr.empty() && !te.empty(), ErrorKind::Config, "split: receiver sets must be nonempty");
  for (int r : tr) {
    require(r >= 0 && static_cast<std::size_t>(r) < ds.num_receivers, ErrorKind::Config,
            "split: train receiver " + std::to_string(r) + " out of range");
  }
  for (int r : te) {
    require(r >= 0 && static_cast<std::size_t>(r) < ds.num_receivers, ErrorKind::Config,
            "split: test receiver " + std::to_string(r) + " out of range");
    if (require_disjoint) {
      require(!tr.count(r), ErrorKind::Config,
              "split: receiver " + std::to_string(r) + " is in both train and test sets");
    }
  }
  DatasetSplit split;
  split.train_receivers.assign(tr.begin(), tr.end());
  split.test_receivers.assign(te.begin(), te.end());
  std::vector<bool> seen_train(ds.num_transmitters), seen_test(ds.num_transmitters);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (tr.count(ds.rx[i])) {
      split.train.push_back(i);
      seen_train[ds.tx[i]] = true;
    } else if (te.count(ds.rx[i])) {
      split.test.push_back(i);
      seen_test[ds.tx[i]] = true;
    }
  }
  for (std::size_t k = 0; k < ds.num_transmitters; ++k) {
    require(seen_train[k] && seen_test[k], ErrorKind::Config,
            "split: transmitter " + std::to_string(k) + " missing from one side");
  }
  return split;
}

TransmitterProfile draw_transmitter(const ImpairmentRanges& r, Rng& rng) {
  TransmitterProfile p;
  p.iq_gain_imbalance = uniform(rng, r.gain_imbalance_min, r.gain_imbalance_max);
  p.iq_phase_imbalance = uniform(rng, -r.phase_imbalance_max, r.phase_imbalance_max);
  p.dc_offset = random_offset(rng, r.dc_max);
  p.pa_cubic_coeff = {uniform(rng, r.cubic_real_min, r.cubic_real_max),
                      uniform(rng, -r.cubic_imag_max, r.cubic_imag_max)};
  p.cfo = uniform(rng, -r.freq_offset_max, r.freq_offset_max);
  return p;
}

ReceiverProfile draw_receiver(const ImpairmentRanges& r, Rng& rng) {
  ReceiverProfile p;
  p.lna_cubic_coeff = {uniform(rng, r.cubic_real_min, r.cubic_real_max),
                       uniform(rng, -r.cubic_imag_max, r.cubic_imag_max)};
  p.iq_gain_imbalance = uniform(rng, r.gain_imbalance_min, r.gain_imbalance_max);
  p.iq_phase_imbalance = uniform(rng, -r.phase_imbalance_max, r.phase_imbalance_max);
  p.dc_offset = random_offset(rng, r.dc_max);
  p.lo_offset = uniform(rng, -r.freq_offset_max, r.freq_offset_max);
  const auto pick = std::uniform_int_distribution<std::size_t>(0, r.adc_bits_choices.size() - 1)(rng);
  p.adc_bits = r.adc_bits_choices[pick];
  return p;
}

ChannelRealization draw_channel(const ChannelLaw& law, Rng& rng) {
  ChannelRealization ch;
  const auto n = std::uniform_int_distribution<std::size_t>(1, law.max_taps)(rng);
  ch.taps.resize(n);
  double energy = 0.0;
  double mag = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double ph = uniform(rng, -std::numbers::pi, std::numbers::pi);
    ch.taps[k] = std::polar(mag, ph);
    energy += mag * mag;
    mag *= law.tap_decay;
  }
  const double norm = 1.0 / std::sqrt(energy);
  for (auto& t : ch.taps) t *= norm;
  ch.noise_sigma = std::pow(10.0, -law.snr_db / 20.0);
  return ch;
}

std::vector<TransmitterProfile> transmitter_profiles(const GeneratorConfig& cfg) {
  if (!cfg.tx_profiles.empty()) return cfg.tx_profiles;
  std::vector<TransmitterProfile> out;
  for (std::size_t i = 0; i < cfg.num_transmitters; ++i) {
    Rng rng = substream(cfg.seed, {kTagTx, i});
    out.push_back(draw_transmitter(cfg.tx_ranges, rng));
  }
  return out;
}

std::vector<ReceiverProfile> receiver_profiles(const GeneratorConfig& cfg) {
  if (!cfg.rx_profiles.empty()) return cfg.rx_profiles;
  std::vector<ReceiverProfile> out;
  for (std::size_t j = 0; j < cfg.num_receivers; ++j) {
    Rng rng = substream(cfg.seed, {kTagRx, j});
    out.push_back(draw_receiver(cfg.rx_ranges, rng));
  }
  return out;
}

IQFrame synthesize_frame(const GeneratorConfig& cfg, const TransmitterProfile& tx,
                         const ReceiverProfile& rx, int y, int d, std::size_t index) {
  Rng rng = substream(cfg.seed, {kTagFrame, static_cast<std::uint64_t>(y),
                                 static_cast<std::uint64_t>(d), index,
                                 static_cast<std::uint64_t>(static_cast<std::int64_t>(cfg.channel.day))});
  const ChannelRealization ch = draw_channel(cfg.channel, rng);
  ComplexSequence s = gen_baseband(cfg.frame, rng);
  s = apply_tx_impairments(s, tx);
  s = apply_channel(s, ch, rng);
  s = apply_rx_impairments(s, rx);
  if (cfg.equalize) s = equalize(s, ch.taps);
  return to_iq_frame(s, cfg.frame.length, cfg.normalize);
}

Dataset generate_dataset(const GeneratorConfig& cfg, kernels::Exec exec) {
  cfg.validate();
  const auto txs = transmitter_profiles(cfg);
  const auto rxs = receiver_profiles(cfg);
  const std::size_t K = cfg.num_transmitters, M = cfg.num_receivers, n = cfg.samples_per_pair;
  const std::size_t L = cfg.frame.length;

  Dataset ds;
  ds.num_transmitters = K;
  ds.num_receivers = M;
  ds.length = L;
  const std::size_t total = K * M * n;
  ds.frames.resize(total * 2 * L);
  ds.tx.resize(total);
  ds.rx.resize(total);

  const bool par = exec == kernels::Exec::Parallel && kernels::max_threads() > 1;
  const auto count = static_cast<std::ptrdiff_t>(total);
#pragma omp parallel for schedule(dynamic, 16) if (par)
  for (std::ptrdiff_t s = 0; s < count; ++s) {
    const auto idx = static_cast<std::size_t>(s);
    const std::size_t y = idx / (M * n);
    const std::size_t d = (idx / n) % M;
    const std::size_t i = idx % n;
    const IQFrame f = synthesize_frame(cfg, txs[y], rxs[d], static_cast<int>(y),
                                       static_cast<int>(d), i);
    std::copy(f.values.begin(), f.values.end(), ds.frames.begin() + static_cast<std::ptrdiff_t>(idx * 2 * L));
    ds.tx[idx] = static_cast<std::uint16_t>(y);
    ds.rx[idx] = static_cast<std::uint16_t>(d);
  }
  return ds;
}

}  // namespace drift::synth
