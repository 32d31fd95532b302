#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "drift/errors.hpp"
#include "drift/nn/checkpoint.hpp"
#include "drift/nn/ops.hpp"
#include "drift/objective/losses.hpp"
#include "drift/synthlab/generator.hpp"
#include "drift/train/trainer.hpp"

using namespace drift;
using namespace drift::train;

namespace {

const synth::Dataset& small_dataset() {
  static const synth::Dataset ds = [] {
    synth::GeneratorConfig g;
    g.num_transmitters = 3;
    g.num_receivers = 3;
    g.samples_per_pair = 10;
    g.frame.length = 64;
    g.frame.pilot_len = 8;
    g.seed = 5;
    return synth::generate_dataset(g);
  }();
  return ds;
}

TrainSet train_set(const std::vector<int>& receivers = {0, 1}) {
  const auto& ds = small_dataset();
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < ds.tx.size(); ++i)
    if (std::find(receivers.begin(), receivers.end(), ds.rx[i]) != receivers.end()) idx.push_back(i);
  return make_train_set(ds, idx, receivers);
}

TrainConfig base_config(Method m = Method::Drift) {
  TrainConfig c;
  c.method = m;
  c.epochs = 2;
  c.batch_size = 16;
  c.learning_rate = 1e-3;
  c.weights = objective::kDefaultWeights;
  c.seed = 9;
  c.embedding_dim = 32;
  c.checkpoint_last_n = 2;
  return c;
}

bool same_values(const nn::Tensor<float>& a, const nn::Tensor<float>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

// Compares every parameter of `a` whose name also exists in `b`.
std::size_t compare_shared(const nn::ParamStore<float>& a, const nn::ParamStore<float>& b) {
  std::size_t n = 0;
  for (const auto& p : a) {
    const auto j = b.find(p.name);
    if (!j) continue;
    INFO(p.name);
    CHECK(same_values(p.value, b[*j].value));
    ++n;
  }
  return n;
}

}  // namespace

TEST_CASE("batching") {
  const auto b = make_batches(130, 64, 1, 1);
  REQUIRE(b.size() == 3);
  CHECK(b[0].size() == 64);
  CHECK(b[1].size() == 64);
  CHECK(b[2].size() == 2);
  CHECK(make_batches(130, 64, 1, 1) == b);
  CHECK(make_batches(130, 64, 1, 2) != b);
  CHECK(make_batches(130, 64, 2, 1) != b);
  std::vector<std::size_t> all;
  for (const auto& batch : b) all.insert(all.end(), batch.begin(), batch.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expect(130);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(all == expect);
  CHECK(make_batches(64, 64, 1, 1).size() == 1);

  // Batches mix receivers.
  const auto set = train_set();
  const auto first = assemble_batch(set, make_batches(set.indices.size(), 16, 3, 1)[0]);
  CHECK(first.x.shape() == nn::Shape{16, 2, 64});
  CHECK(std::set<int>(first.d.begin(), first.d.end()).size() == 2);
}

TEST_CASE("train config validation and serialization") {
  auto c = base_config();
  c.detach_centroids = true;
  c.feature_clamp = 2.5;
  const auto back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.weights == c.weights);

  auto bad = base_config();
  bad.batch_size = 1;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = base_config();
  bad.learning_rate = -1e-3;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = base_config();
  bad.weights.mse = -0.02;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = base_config();
  bad.embedding_dim = 31;
  CHECK_THROWS_AS(bad.validate(), Error);

  CHECK(effective_weights(base_config(Method::Mtl)) == objective::Weights{});
  CHECK(effective_weights(base_config(Method::Dann)) == objective::Weights{1.0, 0.0, 0.0});
  CHECK(layout_for(Method::Erm) == model::Layout{false, false, false});
  CHECK(method_from_name(method_name(Method::TxOnly)) == Method::TxOnly);
}

TEST_CASE("one step matches an explicit oracle") {
  const auto set = train_set();
  const auto cfg = base_config();
  const auto mcfg = model_config_for(cfg, 3, 2, 64);
  auto state = init_state(cfg, mcfg);
  const auto batch = assemble_batch(set, make_batches(set.indices.size(), 16, 1, 1)[0]);

  // Oracle gradient: the objective assembled term by term on a copy.
  model::DriftNet<float> copy(mcfg, state.net.params());
  nn::Tape<float> tape;
  const auto out = copy.forward(tape, batch.x, nn::Mode::Train, 1.0f);
  const auto ce_tx = nn::softmax_cross_entropy(tape, out.tx_logits, batch.y);
  const auto ce_rx = nn::softmax_cross_entropy(tape, out.rx_logits, batch.d);
  const auto grl = nn::softmax_cross_entropy(tape, out.domain_logits, batch.d);
  const auto cen = objective::center_loss(tape, out.z_prime, batch.d);
  const auto sep = objective::separation_loss(tape, out.z_star, out.z_prime);
  const nn::Var parts[] = {ce_tx, ce_rx, grl, cen, sep};
  const float w[] = {1.0f, 1.0f, 1.0f, 0.01f, 0.02f};
  const auto total = nn::weighted_sum<float>(tape, parts, w);
  const auto grads = tape.backward(total);

  const auto before = state.net.params();
  const auto r = train_step(state, batch, cfg);
  CHECK(r.loss.total == doctest::Approx(tape.value(total)[0]).epsilon(1e-6));
  CHECK(r.loss.identity_holds<float>());
  CHECK(state.step == 1);

  double worst = 0.0;
  for (std::size_t p = 0; p < before.size(); ++p) {
    if (!before[p].trainable) continue;
    for (std::size_t k = 0; k < before[p].value.size(); ++k) {
      const double g = grads[p][k];
      const double m = 0.1 * g / 0.1;
      const double v = 0.001 * g * g / 0.001;
      const double expect = before[p].value[k] - 1e-3 * m / (std::sqrt(v) + 1e-8);
      worst = std::max(worst, std::abs(expect - state.net.params()[p].value[k]));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const auto set = train_set();
  const auto cfg = base_config();
  auto state = init_state(cfg, model_config_for(cfg, 3, 2, 64));
  state.adam.lr = 0.0;
  const auto before = state.net.params();
  train_step(state, assemble_batch(set, make_batches(set.indices.size(), 16, 1, 1)[0]), cfg);
  for (std::size_t p = 0; p < before.size(); ++p)
    if (before[p].trainable) CHECK(same_values(before[p].value, state.net.params()[p].value));
}

TEST_CASE("zero weights reduce DRIFT to MTL") {
  const auto set = train_set();
  auto drift_cfg = base_config(Method::Drift);
  drift_cfg.weights = {};
  const auto a = train::train(set, drift_cfg);
  const auto b = train::train(set, base_config(Method::Mtl));
  const auto na = load_network(a.final_checkpoint);
  const auto nb = load_network(b.final_checkpoint);
  CHECK(compare_shared(nb.params(), na.params()) == nb.params().size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    CHECK(a.steps[i].ce_tx == b.steps[i].ce_tx);
    CHECK(a.steps[i].ce_rx == b.steps[i].ce_rx);
  }
}

TEST_CASE("detaching the rx head reduces MTL to the tx-only objective") {
  const auto set = train_set();
  auto mtl = base_config(Method::Mtl);
  mtl.detach_rx_head = true;
  const auto a = train::train(set, mtl);
  const auto b = train::train(set, base_config(Method::TxOnly));
  const auto na = load_network(a.final_checkpoint);
  const auto nb = load_network(b.final_checkpoint);
  CHECK(compare_shared(nb.params(), na.params()) == nb.params().size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) CHECK(a.steps[i].ce_tx == b.steps[i].ce_tx);
}

TEST_CASE("ERM ignores receiver labels") {
  const auto a = train::train(train_set({0, 1, 2}), base_config(Method::Erm));
  const auto b = train::train(train_set({2, 0, 1}), base_config(Method::Erm));
  CHECK(nn::serialize_checkpoint(nn::Checkpoint{{}, a.final_checkpoint.params, a.final_checkpoint.adam}) ==
        nn::serialize_checkpoint(nn::Checkpoint{{}, b.final_checkpoint.params, b.final_checkpoint.adam}));
}

TEST_CASE("training is deterministic and resumable") {
  const auto set = train_set();
  auto cfg = base_config();
  cfg.epochs = 5;
  cfg.checkpoint_last_n = 5;
  const auto full = train::train(set, cfg);
  const auto again = train::train(set, cfg);
  CHECK(nn::serialize_checkpoint(full.final_checkpoint) == nn::serialize_checkpoint(again.final_checkpoint));
  REQUIRE(full.checkpoints.size() == 5);
  CHECK(full.epochs.size() == 5);
  for (const auto& s : full.steps) CHECK(s.identity_holds<float>());

  cfg.checkpoint_last_n = 2;
  CHECK(train::train(set, cfg).checkpoints.size() == 2);
  cfg.checkpoint_last_n = 5;

  // Round trip the epoch-3 checkpoint through bytes, then finish the run.
  const auto bytes = nn::serialize_checkpoint(full.checkpoints[2]);
  const auto resumed = train::train(set, cfg, {}, resume(nn::deserialize_checkpoint(bytes, "epoch3")));
  CHECK(resumed.epochs.size() == 2);
  CHECK(nn::serialize_checkpoint(resumed.final_checkpoint) == nn::serialize_checkpoint(full.final_checkpoint));

  auto cut = bytes;
  cut.resize(cut.size() / 2);
  try {
    resume(nn::deserialize_checkpoint(cut, "cut"));
    FAIL("expected a format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Format);
  }

  // A paper-preset checkpoint does not fit a desk-preset model.
  auto paper = base_config();
  paper.preset = model::Preset::Paper;
  paper.embedding_dim = 0;
  const auto pstate = init_state(paper, model_config_for(paper, 3, 2, 64));
  const auto pck = make_checkpoint(pstate, paper, set.receivers);
  try {
    check_architecture(pck, model_config_for(base_config(), 3, 2, 64));
    FAIL("expected an architecture mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ArchitectureMismatch);
  }
}

TEST_CASE("hooks and loss trace") {
  const auto set = train_set();
  auto cfg = base_config();
  cfg.epochs = 1;
  std::vector<std::size_t> seen;
  std::size_t steps = 0, epochs = 0;
  TrainHooks hooks;
  hooks.on_batch = [&](std::span<const std::size_t> ids) { seen.insert(seen.end(), ids.begin(), ids.end()); };
  hooks.on_step = [&](std::uint64_t, const objective::LossBreakdown& b) {
    ++steps;
    CHECK(b.center >= 0.0);
    CHECK(b.mse <= 0.0);
  };
  hooks.on_epoch = [&](const EpochStats& s, const nn::Checkpoint&) {
    ++epochs;
    CHECK(s.train_accuracy >= 0.0);
    CHECK(s.train_accuracy <= 1.0);
  };
  const auto r = train::train(set, cfg, hooks);
  CHECK(steps == r.steps.size());
  CHECK(epochs == 1);
  std::sort(seen.begin(), seen.end());
  auto expect = set.indices;
  std::sort(expect.begin(), expect.end());
  CHECK(seen == expect);
}

TEST_CASE("non-finite loss or gradient aborts with diagnostics") {
  const auto set = train_set();
  const auto cfg = base_config();
  const auto batch = assemble_batch(set, make_batches(set.indices.size(), 16, 1, 1)[0]);
  auto expect_abort = [&](TrainState& state, const nn::Tensor<float>& x, const char* where) {
    const auto before = state.net.params();
    try {
      train_step(state, Batch{x, batch.y, batch.d}, cfg);
      FAIL("expected a numeric error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Numeric);
      const std::string msg = e.what();
      CHECK(msg.find("step 1") != std::string::npos);
      CHECK(msg.find(where) != std::string::npos);
      const bool detail = msg.find("|grad|") != std::string::npos || msg.find("term") != std::string::npos;
      CHECK(detail);
    }
    CHECK(state.step == 0);
    for (std::size_t p = 0; p < before.size(); ++p) CHECK(same_values(before[p].value, state.net.params()[p].value));
  };

  auto state = init_state(cfg, model_config_for(cfg, 3, 2, 64));
  auto& ps = state.net.params();
  ps[ps.index_of("tx.fc2.b")].value[0] = std::nanf("");
  expect_abort(state, batch.x, "term ce_tx");

  // A NaN sample is skipped by max-pooling in the forward pass but poisons
  // the stem gradient.
  auto clean = init_state(cfg, model_config_for(cfg, 3, 2, 64));
  auto x = batch.x;
  x[5] = std::nanf("");
  expect_abort(clean, x, "enc.stem.conv.w");
}
