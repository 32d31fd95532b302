#include <doctest.h>

#include <cmath>

#include "../support/oracles.hpp"
#include "drift/errors.hpp"
#include "drift/model/network.hpp"
#include "drift/nn/ops.hpp"

using namespace drift;
using namespace drift::model;
using drift::testing::random_tensor;

namespace {

ModelConfig desk_config(std::size_t K, std::size_t M, std::size_t L = 256) {
  ModelConfig cfg;
  cfg.encoder = EncoderConfig::desk(L);
  cfg.num_transmitters = K;
  cfg.num_domains = M;
  cfg.init_seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("encoder output shapes") {
  DriftNet<float> desk(desk_config(4, 3));
  nn::Tape<float> tape;
  const auto z = desk.encode(tape, random_tensor<float>({2, 2, 256}, 1), nn::Mode::Eval);
  CHECK(tape.value(z).shape() == nn::Shape{2, 128});

  ModelConfig pc = desk_config(12, 6);
  pc.encoder = EncoderConfig::paper(256);
  DriftNet<float> paper(pc);
  nn::Tape<float> t2;
  const auto out = paper.forward(t2, random_tensor<float>({2, 2, 256}, 2), nn::Mode::Eval, 1.0f);
  CHECK(t2.value(out.z).shape() == nn::Shape{2, 512});
  CHECK(t2.value(out.z_star).shape() == nn::Shape{2, 256});
  CHECK(t2.value(out.z_prime).shape() == nn::Shape{2, 256});
  CHECK(t2.value(out.tx_logits).shape() == nn::Shape{2, 12});
  CHECK(t2.value(out.rx_logits).shape() == nn::Shape{2, 6});
  CHECK(t2.value(out.domain_logits).shape() == nn::Shape{2, 6});

  nn::Tape<float> t3;
  CHECK_THROWS_AS(desk.encode(t3, random_tensor<float>({2, 2, 128}, 1), nn::Mode::Eval), Error);
  CHECK_THROWS_AS(desk.encode(t3, random_tensor<float>({2, 3, 256}, 1), nn::Mode::Eval), Error);
}

TEST_CASE("shape pipeline over configs") {
  const std::size_t lengths[] = {64, 128, 256};
  const std::size_t classes[][2] = {{2, 2}, {12, 6}, {5, 3}};
  for (std::size_t L : lengths)
    for (const auto& c : classes) {
      DriftNet<float> net(desk_config(c[0], c[1], L));
      nn::Tape<float> tape;
      const auto out = net.forward(tape, random_tensor<float>({3, 2, L}, L + c[0]), nn::Mode::Train, 0.5f);
      CHECK(tape.value(out.tx_logits).shape() == nn::Shape{3, c[0]});
      CHECK(tape.value(out.rx_logits).shape() == nn::Shape{3, c[1]});
      CHECK(tape.value(out.domain_logits).shape() == nn::Shape{3, c[1]});
    }
}

TEST_CASE("eval inference is a pure function of params and input") {
  DriftNet<float> a(desk_config(4, 3));
  DriftNet<float> b(desk_config(4, 3));
  const auto x = random_tensor<float>({3, 2, 256}, 5);
  nn::Tape<float> ta, tb, tc;
  const auto& za = ta.value(a.encode(ta, x, nn::Mode::Eval));
  const auto& zb = tb.value(b.encode(tb, x, nn::Mode::Eval));
  const auto& zc = tc.value(a.encode(tc, x, nn::Mode::Eval));
  CHECK(za.storage() == zb.storage());
  CHECK(za.storage() == zc.storage());

  // Identical rows give identical embeddings.
  auto twin = random_tensor<float>({2, 2, 256}, 6);
  std::copy(twin.data(), twin.data() + 512, twin.data() + 512);
  nn::Tape<float> td;
  const auto& z = td.value(a.encode(td, twin, nn::Mode::Eval));
  for (std::size_t i = 0; i < 128; ++i) CHECK(z[i] == z[128 + i]);
}

TEST_CASE("split halves") {
  DriftNet<double> net(desk_config(2, 2));
  nn::Tape<double> tape;
  const auto z = tape.constant(nn::Tensor<double>({1, 4}, {1, 2, 3, 4}));
  const auto fp = net.split(tape, z);
  CHECK(tape.value(fp.z_star).storage() == std::vector<double>{1, 2});
  CHECK(tape.value(fp.z_prime).storage() == std::vector<double>{3, 4});

  const auto r = tape.constant(random_tensor({5, 128}, 9));
  const auto h = net.split(tape, r);
  CHECK(tape.value(nn::concat_columns(tape, h.z_star, h.z_prime)).storage() == tape.value(r).storage());

  CHECK_THROWS_AS(net.split(tape, tape.constant(nn::Tensor<double>({1, 3}))), Error);

  ModelConfig odd = desk_config(2, 2);
  odd.encoder.embedding_dim = 127;
  CHECK_THROWS_AS(odd.validate(), Error);
}

TEST_CASE("gradients through split stay in their slice") {
  DriftNet<double> net(desk_config(2, 2));
  nn::ParamStore<double> ps;
  ps.add("z", random_tensor({3, 8}, 2));
  for (int half = 0; half < 2; ++half) {
    nn::Tape<double> tape;
    const auto fp = net.split(tape, tape.parameter(ps, 0));
    const auto g = tape.backward(nn::sum(tape, half == 0 ? fp.z_star : fp.z_prime));
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 8; ++j) CHECK(g[0][i * 8 + j] == ((j < 4) == (half == 0) ? 1.0 : 0.0));
  }
}

TEST_CASE("heads") {
  DriftNet<double> net(desk_config(12, 6));
  nn::Tape<double> tape;
  const auto f = tape.constant(random_tensor({4, 64}, 3));
  CHECK(tape.value(net.classify_tx(tape, f)).shape() == nn::Shape{4, 12});
  CHECK(tape.value(net.classify_rx(tape, f)).shape() == nn::Shape{4, 6});
  CHECK(tape.value(net.discriminate(tape, f, 1.0)).shape() == nn::Shape{4, 6});
  CHECK_THROWS_AS(net.classify_tx(tape, tape.constant(random_tensor({4, 63}, 3))), Error);

  // Discriminator forward value does not depend on lambda.
  CHECK(tape.value(net.discriminate(tape, f, 0.0)).storage() == tape.value(net.discriminate(tape, f, 7.5)).storage());

  // Zeroed final layer gives a uniform distribution.
  auto& ps = net.params();
  for (const char* n : {"tx.fc2.w", "tx.fc2.b"}) {
    auto& v = ps[ps.index_of(n)].value;
    std::fill(v.data(), v.data() + v.size(), 0.0);
  }
  const auto p = nn::softmax(tape.value(net.classify_tx(tape, f)));
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == doctest::Approx(1.0 / 12.0));
}

TEST_CASE("head widths follow the layer table") {
  const auto table = parameter_table(desk_config(12, 6));
  auto shape_of = [&](const std::string& n) {
    for (const auto& s : table)
      if (s.name == n) return s.shape;
    return nn::Shape{};
  };
  CHECK(shape_of("tx.fc0.w") == nn::Shape{64, 64});
  CHECK(shape_of("tx.fc1.w") == nn::Shape{32, 64});
  CHECK(shape_of("tx.fc2.w") == nn::Shape{12, 32});
  CHECK(shape_of("rx.fc2.w") == nn::Shape{6, 32});
  CHECK(shape_of("disc.fc0.w") == nn::Shape{32, 64});
  CHECK(shape_of("disc.fc1.w") == nn::Shape{6, 32});

  DriftNet<float> net(desk_config(12, 6));
  REQUIRE(net.params().size() == table.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    CHECK(net.params()[i].name == table[i].name);
    CHECK(net.params()[i].value.shape() == table[i].shape);
  }
}

TEST_CASE("discriminator encoder gradient flips sign with lambda") {
  ModelConfig cfg = drift::testing::make_toy_drift(4).cfg;
  DriftNet<double> net(cfg);
  const auto x = random_tensor({4, 2, 32}, 8);
  const int d[] = {0, 1, 1, 0};
  auto enc_grad = [&](bool transparent) {
    nn::Tape<double> tape;
    tape.set_grl_transparent(transparent);
    const auto z = net.encode(tape, x, nn::Mode::Train);
    const auto fp = net.split(tape, z);
    const auto logits = net.discriminate(tape, fp.z_star, 1.0);
    return tape.backward(nn::softmax_cross_entropy(tape, logits, d));
  };
  const auto rev = enc_grad(false);
  const auto fwd = enc_grad(true);
  const auto& ps = net.params();
  std::size_t checked = 0;
  for (std::size_t p = 0; p < ps.size(); ++p) {
    if (rev[p].empty()) continue;
    const bool encoder = ps[p].name.rfind("enc.", 0) == 0;
    for (std::size_t i = 0; i < rev[p].size(); ++i) {
      CHECK(rev[p][i] == (encoder ? -fwd[p][i] : fwd[p][i]));
      ++checked;
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("predict") {
  CHECK(predict(nn::Tensor<double>({1, 2}, {0.1, 0.9})) == std::vector<int>{1});
  CHECK(predict(nn::Tensor<double>({1, 2}, {0.5, 0.5})) == std::vector<int>{0});
  const auto o = random_tensor({50, 7}, 11, -5.0, 5.0);
  const auto base = predict(o);
  CHECK(predict(nn::softmax(o)) == base);
  auto shifted = o;
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] = 3.5 * shifted[i] - 2.0;
  CHECK(predict(shifted) == base);
}

TEST_CASE("layouts and architecture checks") {
  ModelConfig cfg = desk_config(4, 3);
  cfg.layout = Layout{false, false, false};
  DriftNet<float> erm(cfg);
  CHECK(!erm.params().find("rx.fc0.w"));
  CHECK(!erm.params().find("disc.fc0.w"));
  CHECK(erm.params()[erm.params().index_of("tx.fc0.w")].value.shape() == nn::Shape{64, 128});
  nn::Tape<float> tape;
  const auto out = erm.forward(tape, random_tensor<float>({2, 2, 256}, 1), nn::Mode::Eval, 1.0f);
  CHECK(!out.z_star.valid());
  CHECK(!out.rx_logits.valid());
  CHECK(!out.domain_logits.valid());

  CHECK(model_config_from_json(to_json(cfg)).layout == cfg.layout);
  DriftNet<float> desk(desk_config(4, 3));
  ModelConfig pc = desk_config(4, 3);
  pc.encoder = EncoderConfig::paper(256);
  try {
    DriftNet<float> wrong(pc, desk.params());
    FAIL("expected an architecture mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ArchitectureMismatch);
  }
}
