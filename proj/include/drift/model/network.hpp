#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "drift/nn/ops.hpp"
#include "drift/nn/params.hpp"
#include "drift/nn/tape.hpp"

namespace drift::model {

using nn::Mode;
using nn::Tape;
using nn::Tensor;
using nn::Var;

enum class Preset { Desk, Paper };

std::string preset_name(Preset p);
Preset preset_from_name(const std::string& name);

// Residual 1-D encoder. Layer table:
//   stem   conv k=7 s=2 p=3 (2 -> widths[0]), BN, ReLU, maxpool k=3 s=2 p=1
//   stage  i: blocks_per_stage[i] basic blocks of width widths[i]; the first
//          block of stages 1.. uses stride 2 with a 1x1 conv + BN shortcut
//   head   global average pool -> z in R^{widths.back()}
// Desk: widths 16/32/64/128, one block per stage, E = 128.
// Paper: widths 64/128/256/512, two blocks per stage (ResNet-18), E = 512.
struct EncoderConfig {
  Preset preset = Preset::Desk;
  std::size_t embedding_dim = 128;
  std::vector<std::size_t> stage_widths{16, 32, 64, 128};
  std::vector<std::size_t> blocks_per_stage{1, 1, 1, 1};
  std::size_t input_length = 256;
  std::size_t in_channels = 2;

  static EncoderConfig desk(std::size_t length = 256);
  static EncoderConfig paper(std::size_t length = 256);
  void validate() const;
};

// Which heads exist and whether the embedding is split into halves.
struct Layout {
  bool split = true;          // tx head on z*, rx head on z'; otherwise heads see z
  bool rx_head = true;        // plain receiver classifier on z'
  bool discriminator = true;  // receiver discriminator behind a GRL

  friend bool operator==(const Layout&, const Layout&) = default;
};

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t num_transmitters = 0;  // K
  std::size_t num_domains = 0;       // training receivers M
  Layout layout;
  std::uint64_t init_seed = 0;

  void validate() const;
  std::size_t feature_width() const;  // input width of the heads
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

template <typename T>
class DriftNet {
 public:
  struct FeaturePair {
    Var z_star;
    Var z_prime;
  };

  struct Outputs {
    Var z;
    Var z_star;         // invalid when the layout does not split
    Var z_prime;        // invalid when the layout does not split
    Var tx_logits;
    Var rx_logits;      // invalid without an rx head
    Var domain_logits;  // invalid without a discriminator
  };

  // Fresh parameters: Kaiming-uniform weights from init_seed, zero biases,
  // unit BN scales.
  explicit DriftNet(ModelConfig cfg);

  // Adopts existing parameters; throws ArchitectureMismatch when names or
  // shapes disagree with cfg.
  DriftNet(ModelConfig cfg, nn::ParamStore<T> params);

  const ModelConfig& config() const noexcept { return cfg_; }
  nn::ParamStore<T>& params() noexcept { return params_; }
  const nn::ParamStore<T>& params() const noexcept { return params_; }

  Var encode(Tape<T>& tape, const Tensor<T>& x, Mode mode);
  FeaturePair split(Tape<T>& tape, Var z) const;
  Var classify_tx(Tape<T>& tape, Var features);
  Var classify_rx(Tape<T>& tape, Var features);
  Var discriminate(Tape<T>& tape, Var features, T lambda);

  // Full forward pass for the configured layout.
  Outputs forward(Tape<T>& tape, const Tensor<T>& x, Mode mode, T lambda);

 private:
  Var conv(Tape<T>& tape, Var x, const std::string& name, std::size_t stride, std::size_t pad);
  Var bn(Tape<T>& tape, Var x, const std::string& name, Mode mode);
  Var fc(Tape<T>& tape, Var x, const std::string& name);
  Var p(Tape<T>& tape, const std::string& name);

  ModelConfig cfg_;
  nn::ParamStore<T> params_;
};

// Row-wise argmax; ties resolve to the lowest index.
template <typename T>
std::vector<int> predict(const Tensor<T>& logits);

// Same parameter table as DriftNet(cfg) would build, in order (name, shape, trainable).
struct ParamSpec {
  std::string name;
  nn::Shape shape;
  bool trainable;
};
std::vector<ParamSpec> parameter_table(const ModelConfig& cfg);

}  // namespace drift::model
