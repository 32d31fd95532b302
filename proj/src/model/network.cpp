#include "drift/model/network.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "drift/errors.hpp"

namespace drift::model {

std::string preset_name(Preset p) { return p == Preset::Paper ? "paper" : "desk"; }

Preset preset_from_name(const std::string& name) {
  if (name == "desk") return Preset::Desk;
  if (name == "paper") return Preset::Paper;
  fail(ErrorKind::Config, "unknown encoder preset: " + name);
}

EncoderConfig EncoderConfig::desk(std::size_t length) {
  EncoderConfig c;
  c.preset = Preset::Desk;
  c.embedding_dim = 128;
  c.stage_widths = {16, 32, 64, 128};
  c.blocks_per_stage = {1, 1, 1, 1};
  c.input_length = length;
  return c;
}

EncoderConfig EncoderConfig::paper(std::size_t length) {
  EncoderConfig c;
  c.preset = Preset::Paper;
  c.embedding_dim = 512;
  c.stage_widths = {64, 128, 256, 512};
  c.blocks_per_stage = {2, 2, 2, 2};
  c.input_length = length;
  return c;
}

void EncoderConfig::validate() const {
  require(embedding_dim >= 4 && embedding_dim % 2 == 0, ErrorKind::Config,
          "embedding_dim must be even and >= 4, got " + std::to_string(embedding_dim));
  require(!stage_widths.empty() && stage_widths.size() == blocks_per_stage.size(), ErrorKind::Config,
          "stage_widths and blocks_per_stage must be nonempty and of equal length");
  require(stage_widths.back() == embedding_dim, ErrorKind::Config,
          "last stage width must equal embedding_dim");
  if (preset == Preset::Desk) {
    require(stage_widths.size() <= 4, ErrorKind::Config, "desk preset allows at most 4 stages");
  }
  for (auto w : stage_widths) require(w > 0, ErrorKind::Config, "stage widths must be positive");
  for (auto b : blocks_per_stage) require(b > 0, ErrorKind::Config, "blocks per stage must be positive");
  require(in_channels == 2, ErrorKind::Config, "encoder input must have 2 channels (I/Q)");
  // Stem and pool each halve the length, then one halving per later stage.
  std::size_t len = input_length;
  auto shrink = [&](std::size_t k, std::size_t s, std::size_t pad) {
    require(len + 2 * pad >= k, ErrorKind::Config,
            "input_length " + std::to_string(input_length) + " too short for the encoder");
    len = (len + 2 * pad - k) / s + 1;
  };
  shrink(7, 2, 3);
  shrink(3, 2, 1);
  for (std::size_t i = 1; i < stage_widths.size(); ++i) shrink(3, 2, 1);
}

void ModelConfig::validate() const {
  encoder.validate();
  require(num_transmitters >= 2, ErrorKind::Config, "model needs at least 2 transmitter classes");
  if (layout.rx_head || layout.discriminator) {
    require(num_domains >= 1, ErrorKind::Config, "receiver heads need at least 1 domain");
  }
  require(!(layout.rx_head && !layout.split), ErrorKind::Config,
          "an rx head requires the split embedding");
}

std::size_t ModelConfig::feature_width() const {
  return layout.split ? encoder.embedding_dim / 2 : encoder.embedding_dim;
}

nlohmann::json to_json(const ModelConfig& cfg) {
  const auto& e = cfg.encoder;
  return {
      {"encoder",
       {{"preset", preset_name(e.preset)},
        {"embedding_dim", e.embedding_dim},
        {"stage_widths", e.stage_widths},
        {"blocks_per_stage", e.blocks_per_stage},
        {"input_length", e.input_length},
        {"in_channels", e.in_channels}}},
      {"num_transmitters", cfg.num_transmitters},
      {"num_domains", cfg.num_domains},
      {"layout",
       {{"split", cfg.layout.split},
        {"rx_head", cfg.layout.rx_head},
        {"discriminator", cfg.layout.discriminator}}},
      {"init_seed", cfg.init_seed},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig cfg;
    const auto& e = j.at("encoder");
    cfg.encoder.preset = preset_from_name(e.at("preset").get<std::string>());
    cfg.encoder.embedding_dim = e.at("embedding_dim").get<std::size_t>();
    cfg.encoder.stage_widths = e.at("stage_widths").get<std::vector<std::size_t>>();
    cfg.encoder.blocks_per_stage = e.at("blocks_per_stage").get<std::vector<std::size_t>>();
    cfg.encoder.input_length = e.at("input_length").get<std::size_t>();
    cfg.encoder.in_channels = e.at("in_channels").get<std::size_t>();
    cfg.num_transmitters = j.at("num_transmitters").get<std::size_t>();
    cfg.num_domains = j.at("num_domains").get<std::size_t>();
    const auto& l = j.at("layout");
    cfg.layout.split = l.at("split").get<bool>();
    cfg.layout.rx_head = l.at("rx_head").get<bool>();
    cfg.layout.discriminator = l.at("discriminator").get<bool>();
    cfg.init_seed = j.at("init_seed").get<std::uint64_t>();
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::Format, std::string("malformed model architecture: ") + ex.what());
  }
}

namespace {

std::string block_name(std::size_t stage, std::size_t block) {
  return "enc.s" + std::to_string(stage) + ".b" + std::to_string(block);
}

void head_table(std::vector<ParamSpec>& out, const std::string& prefix,
                const std::vector<std::size_t>& widths) {
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const auto name = prefix + ".fc" + std::to_string(i);
    out.push_back({name + ".w", {widths[i + 1], widths[i]}, true});
    out.push_back({name + ".b", {widths[i + 1]}, true});
  }
}

}  // namespace

std::vector<ParamSpec> parameter_table(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> out;
  auto conv = [&](const std::string& n, std::size_t in, std::size_t o, std::size_t k) {
    out.push_back({n + ".w", {o, in, k}, true});
  };
  auto bn = [&](const std::string& n, std::size_t c) {
    out.push_back({n + ".gamma", {c}, true});
    out.push_back({n + ".beta", {c}, true});
    out.push_back({n + ".mean", {c}, false});
    out.push_back({n + ".var", {c}, false});
  };
  const auto& e = cfg.encoder;
  conv("enc.stem.conv", e.in_channels, e.stage_widths[0], 7);
  bn("enc.stem.bn", e.stage_widths[0]);
  std::size_t in = e.stage_widths[0];
  for (std::size_t s = 0; s < e.stage_widths.size(); ++s) {
    const std::size_t w = e.stage_widths[s];
    for (std::size_t b = 0; b < e.blocks_per_stage[s]; ++b) {
      const auto name = block_name(s, b);
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
      conv(name + ".conv1", in, w, 3);
      bn(name + ".bn1", w);
      conv(name + ".conv2", w, w, 3);
      bn(name + ".bn2", w);
      if (stride != 1 || in != w) {
        conv(name + ".down", in, w, 1);
        bn(name + ".downbn", w);
      }
      in = w;
    }
  }
  const std::size_t E = e.embedding_dim;
  const std::size_t F = cfg.feature_width();
  head_table(out, "tx", {F, E / 2, E / 4, cfg.num_transmitters});
  if (cfg.layout.rx_head) head_table(out, "rx", {F, E / 2, E / 4, cfg.num_domains});
  if (cfg.layout.discriminator) head_table(out, "disc", {F, E / 4, cfg.num_domains});
  return out;
}

namespace {

// Each parameter draws from its own stream keyed by (seed, name), so adding
// or removing a head leaves the remaining initial values untouched.
std::mt19937_64 param_stream(std::uint64_t seed, const std::string& name) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed),
                                   static_cast<std::uint32_t>(seed >> 32)};
  for (unsigned char c : name) words.push_back(c);
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T>
Tensor<T> init_value(const ParamSpec& spec, std::uint64_t seed) {
  Tensor<T> t(spec.shape);
  if (ends_with(spec.name, ".w")) {
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < spec.shape.size(); ++i) fan_in *= spec.shape[i];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    auto rng = param_stream(seed, spec.name);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(rng));
  } else if (ends_with(spec.name, ".gamma") || ends_with(spec.name, ".var")) {
    t.fill(T{1});
  }
  return t;
}

}  // namespace

template <typename T>
DriftNet<T>::DriftNet(ModelConfig cfg) : cfg_(std::move(cfg)) {
  for (const auto& spec : parameter_table(cfg_)) {
    params_.add(spec.name, init_value<T>(spec, cfg_.init_seed), spec.trainable);
  }
}

template <typename T>
DriftNet<T>::DriftNet(ModelConfig cfg, nn::ParamStore<T> params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  const auto table = parameter_table(cfg_);
  require(table.size() == params_.size(), ErrorKind::ArchitectureMismatch,
          "parameter count " + std::to_string(params_.size()) + " does not match architecture (" +
              std::to_string(table.size()) + ")");
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& got = params_[i];
    require(got.name == table[i].name && got.value.shape() == table[i].shape, ErrorKind::ArchitectureMismatch,
            "parameter " + std::to_string(i) + " is " + got.name + " " + nn::shape_string(got.value.shape()) +
                ", architecture expects " + table[i].name + " " + nn::shape_string(table[i].shape));
    params_[i].trainable = table[i].trainable;
  }
}

template <typename T>
Var DriftNet<T>::p(Tape<T>& tape, const std::string& name) {
  return tape.parameter(params_, params_.index_of(name));
}

template <typename T>
Var DriftNet<T>::conv(Tape<T>& tape, Var x, const std::string& name, std::size_t stride, std::size_t pad) {
  return nn::conv1d(tape, x, p(tape, name + ".w"), Var{}, stride, pad);
}

template <typename T>
Var DriftNet<T>::bn(Tape<T>& tape, Var x, const std::string& name, Mode mode) {
  auto& mean = params_[params_.index_of(name + ".mean")].value;
  auto& var = params_[params_.index_of(name + ".var")].value;
  return nn::batchnorm1d(tape, x, p(tape, name + ".gamma"), p(tape, name + ".beta"), mean, var, mode);
}

template <typename T>
Var DriftNet<T>::fc(Tape<T>& tape, Var x, const std::string& name) {
  return nn::dense(tape, x, p(tape, name + ".w"), p(tape, name + ".b"));
}

template <typename T>
Var DriftNet<T>::encode(Tape<T>& tape, const Tensor<T>& x, Mode mode) {
  const auto& e = cfg_.encoder;
  require(x.rank() == 3 && x.dim(1) == e.in_channels && x.dim(2) == e.input_length, ErrorKind::Shape,
          "encoder input must be [B, " + std::to_string(e.in_channels) + ", " +
              std::to_string(e.input_length) + "], got " + nn::shape_string(x.shape()));
  Var h = tape.constant(x);
  h = nn::relu(tape, bn(tape, conv(tape, h, "enc.stem.conv", 2, 3), "enc.stem.bn", mode));
  h = nn::max_pool1d(tape, h, 3, 2, 1);
  std::size_t in = e.stage_widths[0];
  for (std::size_t s = 0; s < e.stage_widths.size(); ++s) {
    const std::size_t w = e.stage_widths[s];
    for (std::size_t b = 0; b < e.blocks_per_stage[s]; ++b) {
      const auto name = block_name(s, b);
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
      Var y = nn::relu(tape, bn(tape, conv(tape, h, name + ".conv1", stride, 1), name + ".bn1", mode));
      y = bn(tape, conv(tape, y, name + ".conv2", 1, 1), name + ".bn2", mode);
      Var shortcut = h;
      if (stride != 1 || in != w) {
        shortcut = bn(tape, conv(tape, h, name + ".down", stride, 0), name + ".downbn", mode);
      }
      h = nn::relu(tape, nn::add(tape, y, shortcut));
      in = w;
    }
  }
  return nn::global_avg_pool(tape, h);
}

template <typename T>
typename DriftNet<T>::FeaturePair DriftNet<T>::split(Tape<T>& tape, Var z) const {
  const auto& v = tape.value(z);
  require(v.rank() == 2 && v.dim(1) % 2 == 0, ErrorKind::Config,
          "split needs an even embedding width, got " + nn::shape_string(v.shape()));
  const std::size_t half = v.dim(1) / 2;
  return {nn::slice_columns(tape, z, 0, half), nn::slice_columns(tape, z, half, 2 * half)};
}

template <typename T>
Var DriftNet<T>::classify_tx(Tape<T>& tape, Var features) {
  Var h = nn::relu(tape, fc(tape, features, "tx.fc0"));
  h = nn::relu(tape, fc(tape, h, "tx.fc1"));
  return fc(tape, h, "tx.fc2");
}

template <typename T>
Var DriftNet<T>::classify_rx(Tape<T>& tape, Var features) {
  require(cfg_.layout.rx_head, ErrorKind::Usage, "model has no receiver head");
  Var h = nn::relu(tape, fc(tape, features, "rx.fc0"));
  h = nn::relu(tape, fc(tape, h, "rx.fc1"));
  return fc(tape, h, "rx.fc2");
}

template <typename T>
Var DriftNet<T>::discriminate(Tape<T>& tape, Var features, T lambda) {
  require(cfg_.layout.discriminator, ErrorKind::Usage, "model has no discriminator");
  Var h = nn::grl(tape, features, lambda);
  h = nn::relu(tape, fc(tape, h, "disc.fc0"));
  return fc(tape, h, "disc.fc1");
}

template <typename T>
typename DriftNet<T>::Outputs DriftNet<T>::forward(Tape<T>& tape, const Tensor<T>& x, Mode mode, T lambda) {
  Outputs out;
  out.z = encode(tape, x, mode);
  Var tx_in = out.z;
  if (cfg_.layout.split) {
    auto fp = split(tape, out.z);
    out.z_star = fp.z_star;
    out.z_prime = fp.z_prime;
    tx_in = fp.z_star;
  }
  out.tx_logits = classify_tx(tape, tx_in);
  if (cfg_.layout.rx_head) out.rx_logits = classify_rx(tape, out.z_prime);
  if (cfg_.layout.discriminator) out.domain_logits = discriminate(tape, tx_in, lambda);
  return out;
}

template <typename T>
std::vector<int> predict(const Tensor<T>& logits) {
  require(logits.rank() == 2 && logits.dim(1) > 0, ErrorKind::Shape,
          "predict expects [B, K] logits, got " + nn::shape_string(logits.shape()));
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  std::vector<int> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    const T* row = logits.data() + b * K;
    out[b] = static_cast<int>(std::max_element(row, row + K) - row);
  }
  return out;
}

template class DriftNet<float>;
template class DriftNet<double>;
template std::vector<int> predict(const Tensor<float>&);
template std::vector<int> predict(const Tensor<double>&);

}  // namespace drift::model
