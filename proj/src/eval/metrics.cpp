#include "drift/eval/metrics.hpp"

#include <cmath>
#include <sstream>

#include "drift/errors.hpp"
#include "drift/io.hpp"
#include "drift/train/trainer.hpp"

namespace drift::eval {

double accuracy(std::span<const int> preds, std::span<const int> labels) {
  require(!preds.empty(), ErrorKind::Usage, "accuracy of an empty prediction set");
  require(preds.size() == labels.size(), ErrorKind::Usage,
          "accuracy: " + std::to_string(preds.size()) + " predictions for " + std::to_string(labels.size()) +
              " labels");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

Inference infer(model::DriftNet<float>& net, const synth::Dataset& ds, std::span<const std::size_t> samples,
                bool keep_embeddings, std::size_t chunk) {
  Inference out;
  out.tx_pred.reserve(samples.size());
  const std::size_t E = net.config().encoder.embedding_dim;
  if (keep_embeddings) out.z = nn::Tensor<float>(nn::Shape{samples.size(), E});
  for (std::size_t begin = 0; begin < samples.size(); begin += chunk) {
    const auto part = samples.subspan(begin, std::min(chunk, samples.size() - begin));
    nn::Tape<float> tape;
    tape.set_no_grad(true);
    auto o = net.forward(tape, train::gather_frames<float>(ds, part), nn::Mode::Eval, 0.0f);
    const auto preds = model::predict(tape.value(o.tx_logits));
    out.tx_pred.insert(out.tx_pred.end(), preds.begin(), preds.end());
    if (keep_embeddings) {
      const auto& z = tape.value(o.z);
      std::copy(z.data(), z.data() + z.size(), out.z.data() + begin * E);
    }
  }
  return out;
}

CheckpointEval evaluate(std::span<const nn::Checkpoint> checkpoints, const synth::Dataset& ds,
                        std::span<const std::size_t> test_samples, std::span<const int> test_receivers) {
  require(!checkpoints.empty(), ErrorKind::Usage, "evaluate needs at least one checkpoint");
  require(!test_receivers.empty(), ErrorKind::Usage, "evaluate needs at least one test receiver");
  std::vector<std::vector<std::size_t>> by_rx(test_receivers.size());
  for (auto i : test_samples) {
    for (std::size_t r = 0; r < test_receivers.size(); ++r) {
      if (ds.rx[i] == test_receivers[r]) by_rx[r].push_back(i);
    }
  }
  for (std::size_t r = 0; r < by_rx.size(); ++r) {
    require(!by_rx[r].empty(), ErrorKind::Usage,
            "no test samples for receiver " + std::to_string(test_receivers[r]));
  }

  CheckpointEval ev;
  ev.receivers.assign(test_receivers.begin(), test_receivers.end());
  ev.per_receiver.assign(test_receivers.size(), 0.0);
  const auto arch = checkpoints.front().meta.at("model");
  for (const auto& ck : checkpoints) {
    require(ck.meta.contains("model") && ck.meta.at("model") == arch, ErrorKind::ArchitectureMismatch,
            "checkpoints passed to evaluate describe different architectures");
    auto net = train::load_network(ck);
    const auto& m = net.config();
    require(m.num_transmitters == ds.num_transmitters && m.encoder.input_length == ds.length,
            ErrorKind::ArchitectureMismatch,
            "checkpoint expects K=" + std::to_string(m.num_transmitters) + ", L=" +
                std::to_string(m.encoder.input_length) + " but the dataset has K=" +
                std::to_string(ds.num_transmitters) + ", L=" + std::to_string(ds.length));
    std::vector<double> accs;
    for (const auto& samples : by_rx) {
      const auto inf = infer(net, ds, samples);
      std::vector<int> labels(samples.size());
      for (std::size_t k = 0; k < samples.size(); ++k) labels[k] = ds.tx[samples[k]];
      accs.push_back(accuracy(inf.tx_pred, labels));
    }
    ev.per_checkpoint.push_back(accs);
  }
  for (std::size_t r = 0; r < test_receivers.size(); ++r) {
    std::vector<double> col;
    for (const auto& row : ev.per_checkpoint) col.push_back(row[r]);
    ev.per_receiver[r] = mean(col);
  }
  ev.average = mean(ev.per_receiver);
  return ev;
}

double mean(std::span<const double> v) {
  require(!v.empty(), ErrorKind::Usage, "mean of an empty list");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double MetricsRecord::seed_std() const {
  if (per_seed.size() < 2) return 0.0;
  std::vector<double> avgs;
  for (const auto& s : per_seed) avgs.push_back(s.average);
  const double m = mean(avgs);
  double ss = 0.0;
  for (double a : avgs) ss += (a - m) * (a - m);
  return std::sqrt(ss / static_cast<double>(avgs.size() - 1));
}

bool MetricsRecord::consistent() const {
  if (per_seed.empty() || per_receiver.size() != test_receivers.size()) return false;
  for (const auto& s : per_seed) {
    if (s.per_receiver.size() != test_receivers.size() || s.average != mean(s.per_receiver)) return false;
  }
  for (std::size_t r = 0; r < per_receiver.size(); ++r) {
    std::vector<double> col;
    for (const auto& s : per_seed) col.push_back(s.per_receiver[r]);
    if (per_receiver[r] != mean(col)) return false;
  }
  return average == mean(per_receiver);
}

MetricsRecord aggregate(std::string method, std::span<const int> test_receivers,
                        std::span<const SeedResult> seeds, std::size_t checkpoints) {
  require(!seeds.empty(), ErrorKind::Usage, "aggregate needs at least one seed");
  MetricsRecord r;
  r.method = std::move(method);
  r.test_receivers.assign(test_receivers.begin(), test_receivers.end());
  r.per_seed.assign(seeds.begin(), seeds.end());
  r.checkpoints = checkpoints;
  r.checkpoint_averaged = checkpoints > 1;
  for (std::size_t k = 0; k < test_receivers.size(); ++k) {
    std::vector<double> col;
    for (const auto& s : seeds) col.push_back(s.per_receiver.at(k));
    r.per_receiver.push_back(mean(col));
  }
  r.average = mean(r.per_receiver);
  return r;
}

nlohmann::json to_json(const MetricsRecord& r) {
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& s : r.per_seed) {
    seeds.push_back({{"seed", s.seed}, {"per_receiver", s.per_receiver}, {"average", s.average}});
  }
  return {{"method", r.method},
          {"test_receivers", r.test_receivers},
          {"per_receiver", r.per_receiver},
          {"average", r.average},
          {"seed_std", r.seed_std()},
          {"per_seed", seeds},
          {"checkpoint_averaged", r.checkpoint_averaged},
          {"checkpoints", r.checkpoints}};
}

std::string results_table_csv(std::span<const MetricsRecord> records) {
  require(!records.empty(), ErrorKind::Usage, "results table needs at least one record");
  const auto& rx = records.front().test_receivers;
  std::ostringstream os;
  os << "receiver";
  for (const auto& r : records) {
    require(r.test_receivers == rx, ErrorKind::Usage, "records disagree on the test receivers");
    os << ',' << r.method;
  }
  os << '\n';
  for (std::size_t k = 0; k < rx.size(); ++k) {
    os << "rx" << rx[k];
    for (const auto& r : records) os << ',' << io::format_double(100.0 * r.per_receiver[k]);
    os << '\n';
  }
  os << "Average";
  for (const auto& r : records) os << ',' << io::format_double(100.0 * r.average);
  os << '\n';
  return os.str();
}

}  // namespace drift::eval
