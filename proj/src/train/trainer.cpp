#include "drift/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "drift/errors.hpp"
#include "drift/nn/ops.hpp"

namespace drift::train {

std::string method_name(Method m) {
  switch (m) {
    case Method::Drift: return "DRIFT";
    case Method::Erm: return "ERM";
    case Method::Mtl: return "MTL";
    case Method::Dann: return "DANN";
    case Method::TxOnly: return "TX-ONLY";
  }
  return "?";
}

Method method_from_name(const std::string& name) {
  for (auto m : {Method::Drift, Method::Erm, Method::Mtl, Method::Dann, Method::TxOnly}) {
    if (name == method_name(m)) return m;
  }
  fail(ErrorKind::Config, "unknown method: " + name + " (expected DRIFT, ERM, MTL, DANN or TX-ONLY)");
}

model::Layout layout_for(Method m) {
  switch (m) {
    case Method::Drift: return {true, true, true};
    case Method::Mtl: return {true, true, false};
    case Method::Erm: return {false, false, false};
    case Method::Dann: return {false, false, true};
    case Method::TxOnly: return {true, false, false};
  }
  return {};
}

void TrainConfig::validate() const {
  require(epochs >= 1, ErrorKind::Config, "epochs must be >= 1");
  require(batch_size >= 2, ErrorKind::Config, "batch_size must be >= 2");
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), ErrorKind::Config,
          "learning_rate must be finite and non-negative");
  require(embedding_dim % 2 == 0, ErrorKind::Config, "embedding_dim must be even");
  require(checkpoint_last_n >= 1, ErrorKind::Config, "checkpoint_last_n must be >= 1");
  require(feature_clamp >= 0.0 && std::isfinite(feature_clamp), ErrorKind::Config,
          "feature_clamp must be finite and non-negative");
  weights.validate();
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {
      {"method", method_name(cfg.method)},
      {"epochs", cfg.epochs},
      {"batch_size", cfg.batch_size},
      {"learning_rate", cfg.learning_rate},
      {"lambda1", cfg.weights.grl},
      {"lambda2", cfg.weights.center},
      {"lambda3", cfg.weights.mse},
      {"seed", cfg.seed},
      {"preset", model::preset_name(cfg.preset)},
      {"embedding_dim", cfg.embedding_dim},
      {"checkpoint_last_n", cfg.checkpoint_last_n},
      {"detach_centroids", cfg.detach_centroids},
      {"detach_rx_head", cfg.detach_rx_head},
      {"feature_clamp", cfg.feature_clamp},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  try {
    TrainConfig c;
    c.method = method_from_name(j.at("method").get<std::string>());
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.weights = {j.at("lambda1").get<double>(), j.at("lambda2").get<double>(), j.at("lambda3").get<double>()};
    c.seed = j.at("seed").get<std::uint64_t>();
    c.preset = model::preset_from_name(j.at("preset").get<std::string>());
    c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    c.checkpoint_last_n = j.at("checkpoint_last_n").get<std::size_t>();
    c.detach_centroids = j.at("detach_centroids").get<bool>();
    c.detach_rx_head = j.at("detach_rx_head").get<bool>();
    c.feature_clamp = j.at("feature_clamp").get<double>();
    return c;
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorKind::Format, std::string("malformed train config: ") + ex.what());
  }
}

objective::Weights effective_weights(const TrainConfig& cfg) {
  switch (cfg.method) {
    case Method::Drift: return cfg.weights;
    case Method::Dann: return {cfg.weights.grl, 0.0, 0.0};
    default: return {};
  }
}

int TrainSet::domain_of(std::size_t sample) const {
  const int rx = data->rx[sample];
  auto it = std::find(receivers.begin(), receivers.end(), rx);
  require(it != receivers.end(), ErrorKind::Usage,
          "sample " + std::to_string(sample) + " comes from receiver " + std::to_string(rx) +
              ", which is not a training receiver");
  return static_cast<int>(it - receivers.begin());
}

TrainSet make_train_set(const synth::Dataset& ds, std::span<const std::size_t> indices,
                        std::span<const int> receivers) {
  require(!indices.empty(), ErrorKind::Usage, "training set is empty");
  TrainSet set{&ds, {indices.begin(), indices.end()}, {receivers.begin(), receivers.end()}};
  for (auto i : set.indices) {
    require(i < ds.size(), ErrorKind::Usage, "sample index out of range");
    (void)set.domain_of(i);
  }
  return set;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size,
                                                   std::uint64_t seed, std::size_t epoch) {
  require(count > 0, ErrorKind::Usage, "make_batches: empty dataset");
  require(batch_size > 0, ErrorKind::Usage, "make_batches: zero batch size");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = synth::substream(seed, {0x42617463ULL, epoch});
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle.
  for (std::size_t i = count - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
    std::swap(order[i], order[j]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t begin = 0; begin < count; begin += batch_size) {
    const std::size_t end = std::min(count, begin + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

template <typename T>
nn::Tensor<T> gather_frames(const synth::Dataset& ds, std::span<const std::size_t> samples) {
  nn::Tensor<T> x(nn::Shape{samples.size(), 2, ds.length});
  const std::size_t fs = ds.frame_size();
  for (std::size_t b = 0; b < samples.size(); ++b) {
    const auto f = ds.frame(samples[b]);
    std::transform(f.begin(), f.end(), x.data() + b * fs, [](float v) { return static_cast<T>(v); });
  }
  return x;
}

template nn::Tensor<float> gather_frames<float>(const synth::Dataset&, std::span<const std::size_t>);
template nn::Tensor<double> gather_frames<double>(const synth::Dataset&, std::span<const std::size_t>);

model::ModelConfig model_config_for(const TrainConfig& cfg, std::size_t num_transmitters,
                                    std::size_t num_domains, std::size_t length) {
  model::ModelConfig m;
  m.encoder = cfg.preset == model::Preset::Paper ? model::EncoderConfig::paper(length)
                                                 : model::EncoderConfig::desk(length);
  if (cfg.embedding_dim != 0) {
    m.encoder.embedding_dim = cfg.embedding_dim;
    m.encoder.stage_widths.back() = cfg.embedding_dim;
  }
  m.num_transmitters = num_transmitters;
  m.num_domains = num_domains;
  m.layout = layout_for(cfg.method);
  m.init_seed = cfg.seed;
  m.validate();
  return m;
}

TrainState init_state(const TrainConfig& cfg, const model::ModelConfig& model_cfg) {
  model::DriftNet<float> net(model_cfg);
  auto adam = nn::make_adam(net.params(), cfg.learning_rate);
  return {std::move(net), std::move(adam), 0, 0};
}

Batch assemble_batch(const TrainSet& set, std::span<const std::size_t> positions) {
  std::vector<std::size_t> samples(positions.size());
  Batch b;
  b.y.resize(positions.size());
  b.d.resize(positions.size());
  for (std::size_t k = 0; k < positions.size(); ++k) {
    samples[k] = set.indices.at(positions[k]);
    b.y[k] = set.data->tx[samples[k]];
    b.d[k] = set.domain_of(samples[k]);
  }
  b.x = gather_frames<float>(*set.data, samples);
  return b;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

StepResult train_step(TrainState& state, const Batch& batch, const TrainConfig& cfg) {
  require(!batch.y.empty(), ErrorKind::Usage, "train_step: empty batch");
  auto& net = state.net;
  const auto& layout = net.config().layout;
  const auto w = effective_weights(cfg);
  const std::uint64_t step = state.step + 1;

  // Forward updates BN running statistics; an aborted step restores them.
  std::vector<nn::Tensor<float>> buffers;
  for (const auto& p : net.params())
    if (!p.trainable) buffers.push_back(p.value);
  auto abort = [&](const std::string& msg) {
    std::size_t k = 0;
    for (auto& p : net.params())
      if (!p.trainable) p.value = buffers[k++];
    fail(ErrorKind::Numeric, msg);
  };

  nn::Tape<float> tape;
  tape.set_check_finite(false);
  auto out = net.forward(tape, batch.x, nn::Mode::Train, static_cast<float>(w.grl));

  objective::LossTerms terms;
  terms.ce_tx = nn::softmax_cross_entropy(tape, out.tx_logits, batch.y);
  if (layout.rx_head) {
    nn::Var rx_logits = out.rx_logits;
    if (cfg.detach_rx_head) rx_logits = net.classify_rx(tape, tape.constant(tape.value(out.z_prime)));
    terms.ce_rx = nn::softmax_cross_entropy(tape, rx_logits, batch.d);
  }
  if (layout.discriminator) terms.grl = objective::grl_loss(tape, out.domain_logits, batch.d);
  if (cfg.method == Method::Drift) {
    terms.center = objective::center_loss(tape, out.z_prime, batch.d, cfg.detach_centroids);
    terms.mse = objective::separation_loss(tape, out.z_star, out.z_prime, cfg.feature_clamp);
  }
  auto total = objective::total_loss(tape, terms, w);

  const auto& br = total.breakdown;
  const std::pair<const char*, double> parts[] = {{"ce_tx", br.ce_tx},   {"ce_rx", br.ce_rx},
                                                  {"grl", br.grl},       {"center", br.center},
                                                  {"mse", br.mse},       {"total", br.total}};
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v)) {
      abort("non-finite loss at step " + std::to_string(step) + ": term " + name + " = " + fmt(v) +
            " (before backward)");
    }
  }

  auto grads = tape.backward(total.total);
  double max_grad = 0.0;
  std::string bad;
  for (std::size_t p = 0; p < grads.size(); ++p) {
    for (float g : grads[p].values()) {
      if (!std::isfinite(g)) {
        if (bad.empty()) bad = net.params()[p].name;
      } else {
        max_grad = std::max(max_grad, static_cast<double>(std::fabs(g)));
      }
    }
  }
  if (!bad.empty()) {
    abort("non-finite gradient at step " + std::to_string(step) + " in " + bad + " (total " + fmt(br.total) +
          ", max finite |grad| " + fmt(max_grad) + ")");
  }

  nn::adam_step(state.adam, net.params(), grads);
  state.step = step;

  StepResult r;
  r.loss = br;
  const auto preds = model::predict(tape.value(out.tx_logits));
  for (std::size_t i = 0; i < preds.size(); ++i) r.tx_correct += preds[i] == batch.y[i];
  return r;
}

nn::Checkpoint make_checkpoint(const TrainState& state, const TrainConfig& cfg,
                               std::span<const int> receivers) {
  nn::Checkpoint ck;
  ck.meta = {
      {"model", model::to_json(state.net.config())},
      {"train", to_json(cfg)},
      {"epoch", state.epoch},
      {"step", state.step},
      {"train_receivers", std::vector<int>(receivers.begin(), receivers.end())},
  };
  ck.params = state.net.params();
  ck.adam = state.adam;
  return ck;
}

TrainResult train(const TrainSet& set, const TrainConfig& cfg, const TrainHooks& hooks,
                  std::optional<TrainState> resume_from) {
  cfg.validate();
  require(set.data != nullptr, ErrorKind::Usage, "train: no dataset");
  const auto model_cfg =
      model_config_for(cfg, set.data->num_transmitters, set.receivers.size(), set.data->length);
  TrainState state = resume_from ? std::move(*resume_from) : init_state(cfg, model_cfg);
  if (resume_from) check_architecture(make_checkpoint(state, cfg, set.receivers), model_cfg);
  require(state.epoch <= cfg.epochs, ErrorKind::Usage,
          "checkpoint is at epoch " + std::to_string(state.epoch) + ", beyond the configured " +
              std::to_string(cfg.epochs));

  TrainResult result;
  std::vector<std::size_t> samples;
  for (std::size_t epoch = state.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    const auto batches = make_batches(set.indices.size(), cfg.batch_size, cfg.seed, epoch);
    std::size_t correct = 0, seen = 0;
    double ce_sum = 0.0, total_sum = 0.0;
    for (const auto& positions : batches) {
      if (hooks.on_batch) {
        samples.resize(positions.size());
        for (std::size_t k = 0; k < positions.size(); ++k) samples[k] = set.indices[positions[k]];
        hooks.on_batch(samples);
      }
      const auto r = train_step(state, assemble_batch(set, positions), cfg);
      correct += r.tx_correct;
      seen += positions.size();
      ce_sum += r.loss.ce_tx;
      total_sum += r.loss.total;
      result.steps.push_back(r.loss);
      if (hooks.on_step) hooks.on_step(state.step, r.loss);
    }
    state.epoch = epoch;
    EpochStats stats{epoch, static_cast<double>(correct) / static_cast<double>(seen),
                     ce_sum / static_cast<double>(batches.size()),
                     total_sum / static_cast<double>(batches.size())};
    result.epochs.push_back(stats);
    auto ck = make_checkpoint(state, cfg, set.receivers);
    if (hooks.on_epoch) hooks.on_epoch(stats, ck);
    if (epoch + cfg.checkpoint_last_n > cfg.epochs) result.checkpoints.push_back(std::move(ck));
  }
  result.final_checkpoint = make_checkpoint(state, cfg, set.receivers);
  return result;
}

void check_architecture(const nn::Checkpoint& ckpt, const model::ModelConfig& expected) {
  require(ckpt.meta.contains("model"), ErrorKind::Format, "checkpoint has no model architecture");
  const auto got = model::model_config_from_json(ckpt.meta.at("model"));
  const auto a = model::to_json(got);
  auto b = model::to_json(expected);
  b["init_seed"] = a["init_seed"];
  if (a != b) {
    fail(ErrorKind::ArchitectureMismatch, "checkpoint architecture " + a.dump() + " does not match expected " +
                                              b.dump());
  }
}

model::DriftNet<float> load_network(const nn::Checkpoint& ckpt) {
  require(ckpt.meta.contains("model"), ErrorKind::Format, "checkpoint has no model architecture");
  return model::DriftNet<float>(model::model_config_from_json(ckpt.meta.at("model")), ckpt.params);
}

TrainState resume(const nn::Checkpoint& ckpt) {
  require(ckpt.adam.has_value(), ErrorKind::Format, "checkpoint has no optimizer state to resume from");
  require(ckpt.meta.contains("epoch") && ckpt.meta.contains("step"), ErrorKind::Format,
          "checkpoint has no training position");
  TrainState s{load_network(ckpt), *ckpt.adam, ckpt.meta.at("epoch").get<std::size_t>(),
               ckpt.meta.at("step").get<std::uint64_t>()};
  return s;
}

}  // namespace drift::train
