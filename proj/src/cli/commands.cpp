#include "drift/cli/commands.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "drift/cli/config.hpp"
#include "drift/eval/metrics.hpp"
#include "drift/eval/probes.hpp"
#include "drift/eval/protocol.hpp"
#include "drift/io.hpp"
#include "drift/kernels/kernels.hpp"
#include "drift/nn/checkpoint.hpp"
#include "drift/synthlab/dataset_io.hpp"
#include "drift/train/trainer.hpp"

#ifndef DRIFT_VERSION
#define DRIFT_VERSION "dev"
#endif

namespace drift::cli {

namespace fs = std::filesystem;

int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Usage: return 2;
    case ErrorKind::Config: return 3;
    case ErrorKind::Io: return 4;
    case ErrorKind::Format: return 5;
    case ErrorKind::ArchitectureMismatch: return 6;
    case ErrorKind::Numeric: return 7;
    case ErrorKind::Shape:
    case ErrorKind::Label:
    case ErrorKind::DegenerateBatch: return 8;
  }
  return 1;
}

std::string_view error_category(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Shape:
    case ErrorKind::Label:
    case ErrorKind::DegenerateBatch: return "data";
    default: return error_kind_name(kind);
  }
}

int guarded(const std::function<void()>& fn) {
  try {
    fn();
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << error_category(e.kind()) << ": " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 1;
  }
}

namespace {

// Output directory guarded by a lock file for the lifetime of a command.
class OutputDir {
 public:
  explicit OutputDir(fs::path dir) : dir_(std::move(dir)) {
    require(!dir_.empty(), ErrorKind::Usage, "--out is required");
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) fail(ErrorKind::Io, "cannot create output directory " + dir_.string() + ": " + ec.message());
    lock_ = dir_ / ".lock";
    const int fd = ::open(lock_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      if (errno == EEXIST) fail(ErrorKind::Io, "output directory is locked by another run: " + lock_.string());
      fail(ErrorKind::Io, "cannot create " + lock_.string() + ": " + std::strerror(errno));
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~OutputDir() {
    std::error_code ec;
    fs::remove(lock_, ec);
  }
  OutputDir(const OutputDir&) = delete;
  OutputDir& operator=(const OutputDir&) = delete;

  const fs::path& path() const { return dir_; }

  void text(const std::string& name, const std::string& body) {
    io::write_text_atomic(dir_ / name, body);
    outputs_.push_back(name);
  }
  void json(const std::string& name, const nlohmann::json& j) { text(name, j.dump(2) + "\n"); }
  void record(const std::string& name) { outputs_.push_back(name); }
  const std::vector<std::string>& outputs() const { return outputs_; }

 private:
  fs::path dir_;
  fs::path lock_;
  std::vector<std::string> outputs_;
};

struct Run {
  std::string command;
  Options opts;
  ExperimentConfig cfg;
  nlohmann::json inputs = nlohmann::json::array();
};

std::string file_sha256(const fs::path& p, std::string_view what) {
  return io::sha256_hex(io::read_file(p, what));
}

Run start(const std::string& command, const Options& opts) {
  Run r{command, opts, parse_config(opts.config), {}};
  r.inputs.push_back({{"role", "config"}, {"path", opts.config.string()}, {"sha256", file_sha256(opts.config, "config")}});
  if (opts.seed) {
    if (command == "generate") {
      r.cfg.generator.seed = *opts.seed;
    } else {
      r.cfg.train.seed = *opts.seed;
      r.cfg.protocol.seeds = {*opts.seed};
    }
    refresh(r.cfg);
  }
  return r;
}

void write_manifest(OutputDir& out, const Run& r) {
  nlohmann::json m = {{"tool", "drift"},
                      {"version", DRIFT_VERSION},
                      {"command", r.command},
                      {"argv", r.opts.argv},
                      {"config_sha256", r.cfg.hash},
                      {"config", r.cfg.canonical},
                      {"seed", r.command == "generate" ? r.cfg.generator.seed : r.cfg.train.seed},
                      {"protocol_seeds", r.cfg.protocol.seeds},
                      {"inputs", r.inputs},
                      {"outputs", out.outputs()}};
  io::write_text_atomic(out.path() / "manifest.json", m.dump(2) + "\n");
}

nn::Checkpoint load_checkpoint_arg(const fs::path& p, Run& r) {
  if (!fs::is_regular_file(p)) fail(ErrorKind::Io, "checkpoint not found: " + p.string());
  r.inputs.push_back({{"role", "checkpoint"}, {"path", p.string()}, {"sha256", file_sha256(p, "checkpoint")}});
  return nn::load_checkpoint(p);
}

struct Data {
  synth::Dataset train;
  std::optional<synth::Dataset> test;  // only for a nonzero test day

  eval::ProtocolData protocol() const { return {&train, test ? &*test : &train}; }
};

synth::Dataset load_dataset_arg(const fs::path& p, const std::string& role, Run& r) {
  if (!fs::is_regular_file(p)) fail(ErrorKind::Io, role + " not found: " + p.string());
  r.inputs.push_back({{"role", role}, {"path", p.string()}, {"sha256", file_sha256(p, role)}});
  return synth::load_dataset(p);
}

synth::GeneratorConfig test_day_generator(const ExperimentConfig& cfg) {
  auto g = cfg.generator;
  g.channel.day = cfg.protocol.test_day;
  return g;
}

Data load_data(Run& r) {
  Data d;
  if (r.opts.data) {
    d.train = load_dataset_arg(*r.opts.data, "dataset", r);
  } else {
    d.train = synth::generate_dataset(r.cfg.generator);
    r.inputs.push_back({{"role", "dataset"}, {"generated", true}});
  }
  if (r.cfg.protocol.test_day != 0) {
    if (r.opts.test_data) {
      d.test = load_dataset_arg(*r.opts.test_data, "test dataset", r);
    } else {
      d.test = synth::generate_dataset(test_day_generator(r.cfg));
      r.inputs.push_back({{"role", "test dataset"}, {"generated", true}});
    }
  } else {
    require(!r.opts.test_data, ErrorKind::Usage, "--test-data needs protocol.test_day != 0");
  }
  return d;
}

std::size_t parallel_runs() { return std::getenv("DRIFT_THREADS") ? kernels::max_threads() : 1; }

std::string epoch_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04zu.ckpt", epoch);
  return buf;
}

std::string step_row(std::uint64_t step, const objective::LossBreakdown& b) {
  std::ostringstream os;
  os << step << ',' << io::format_double(b.ce_tx) << ',' << io::format_double(b.ce_rx) << ','
     << io::format_double(b.grl) << ',' << io::format_double(b.center) << ',' << io::format_double(b.mse) << ','
     << io::format_double(b.total) << '\n';
  return os.str();
}

// The checkpoint must classify this dataset's transmitters at its frame length.
void check_fits(const nn::Checkpoint& ckpt, const synth::Dataset& ds, const fs::path& origin) {
  require(ckpt.meta.contains("model"), ErrorKind::Format, origin.string() + ": checkpoint has no model architecture");
  const auto m = model::model_config_from_json(ckpt.meta.at("model"));
  require(m.num_transmitters == ds.num_transmitters && m.encoder.input_length == ds.length,
          ErrorKind::ArchitectureMismatch,
          origin.string() + ": checkpoint expects K=" + std::to_string(m.num_transmitters) + ", L=" +
              std::to_string(m.encoder.input_length) + " but the dataset has K=" +
              std::to_string(ds.num_transmitters) + ", L=" + std::to_string(ds.length));
}

nlohmann::json audit_json(const eval::SampleAudit& a) {
  return {{"batches", a.batches.load()}, {"samples", a.samples.load()}, {"test_receiver_samples", a.violations.load()}};
}

void require_clean(const eval::SampleAudit& a) {
  require(a.violations.load() == 0, ErrorKind::Usage,
          "protocol audit found " + std::to_string(a.violations.load()) + " test-receiver samples in training batches");
}

// Final checkpoint of every run, without optimizer state.
eval::RunOptions saving_runs(OutputDir& out, eval::SampleAudit& audit, std::vector<std::string>& saved) {
  eval::RunOptions o;
  o.audit = &audit;
  o.parallel_runs = parallel_runs();
  o.on_run = [&out, &saved](const std::string& label, const eval::RunArtifacts& art) {
    auto ck = art.result.checkpoints.back();
    ck.adam.reset();
    std::string dir = label;
    for (auto& ch : dir)
      if (ch == ' ' || ch == '=' || ch == '+') ch = '_';
    const std::string name = "checkpoints/" + dir + "/seed" + std::to_string(art.seed) + ".ckpt";
    fs::create_directories(out.path() / fs::path(name).parent_path());
    nn::save_checkpoint(out.path() / name, ck);
    saved.push_back(name);
  };
  return o;
}

}  // namespace

void cmd_generate(const Options& opts) {
  auto r = start("generate", opts);
  OutputDir out(opts.out);
  const auto ds = synth::generate_dataset(r.cfg.generator);
  synth::save_dataset(out.path() / "ds.bin", ds, r.cfg.generator);
  out.record("ds.bin");
  out.record("ds.bin.json");
  if (r.cfg.protocol.test_day != 0) {
    const auto g = test_day_generator(r.cfg);
    synth::save_dataset(out.path() / "ds_test.bin", synth::generate_dataset(g), g);
    out.record("ds_test.bin");
    out.record("ds_test.bin.json");
  }
  write_manifest(out, r);
  std::cout << "wrote " << ds.size() << " samples to " << (out.path() / "ds.bin").string() << '\n';
}

void cmd_train(const Options& opts) {
  auto r = start("train", opts);
  std::optional<train::TrainState> state;
  if (opts.resume) state = train::resume(load_checkpoint_arg(*opts.resume, r));
  const auto data = load_data(r);
  const auto split = eval::protocol_split(r.cfg.protocol, data.protocol());
  const auto set = train::make_train_set(data.train, split.train, r.cfg.protocol.train_receivers);
  OutputDir out(opts.out);
  fs::create_directories(out.path() / "checkpoints");

  std::string steps = "step,ce_tx,ce_rx,grl,center,mse,total\n";
  std::string epochs = "epoch,train_accuracy,mean_ce_tx,mean_total\n";
  std::vector<std::string> kept;
  train::TrainHooks hooks;
  hooks.on_step = [&](std::uint64_t step, const objective::LossBreakdown& b) { steps += step_row(step, b); };
  hooks.on_epoch = [&](const train::EpochStats& s, const nn::Checkpoint& ck) {
    epochs += std::to_string(s.epoch) + ',' + io::format_double(s.train_accuracy) + ',' +
              io::format_double(s.mean_ce_tx) + ',' + io::format_double(s.mean_total) + '\n';
    const std::string name = "checkpoints/" + epoch_name(s.epoch);
    nn::save_checkpoint(out.path() / name, ck);
    kept.push_back(name);
    while (kept.size() > r.cfg.train.checkpoint_last_n) {
      fs::remove(out.path() / kept.front());
      kept.erase(kept.begin());
    }
    std::cout << "epoch " << s.epoch << " train_accuracy " << io::format_double(s.train_accuracy) << " mean_total "
              << io::format_double(s.mean_total) << '\n';
  };
  train::train(set, r.cfg.train, hooks, std::move(state));
  for (const auto& k : kept) out.record(k);
  out.text("train_metrics.csv", steps);
  out.text("epoch_metrics.csv", epochs);
  write_manifest(out, r);
}

void cmd_eval(const Options& opts) {
  auto r = start("eval", opts);
  if (!opts.checkpoints.empty()) {
    std::vector<nn::Checkpoint> ckpts;
    for (const auto& p : opts.checkpoints) ckpts.push_back(load_checkpoint_arg(p, r));
    const auto data = load_data(r);
    const auto pd = data.protocol();
    for (std::size_t i = 0; i < ckpts.size(); ++i) check_fits(ckpts[i], *pd.test, opts.checkpoints[i]);
    const auto split = eval::protocol_split(r.cfg.protocol, pd);
    const auto ev = eval::evaluate(ckpts, *pd.test, split.test, r.cfg.protocol.test_receivers);
    const auto& meta = ckpts.front().meta;
    const std::string label = meta.contains("train") ? meta.at("train").value("method", std::string("model")) : "model";
    const std::uint64_t seed = meta.contains("train") ? meta.at("train").value("seed", std::uint64_t{0}) : 0;
    const eval::SeedResult sr{seed, ev.per_receiver, ev.average};
    const std::vector<eval::MetricsRecord> records{
        eval::aggregate(label, r.cfg.protocol.test_receivers, std::span(&sr, 1), ckpts.size())};
    OutputDir out(opts.out);
    out.text("results.csv", eval::results_table_csv(records));
    out.json("results.json", {{"config_sha256", r.cfg.hash},
                              {"records", {eval::to_json(records.front())}},
                              {"per_checkpoint", ev.per_checkpoint}});
    write_manifest(out, r);
    std::cout << eval::results_table_csv(records);
    return;
  }

  const auto data = load_data(r);
  OutputDir out(opts.out);
  eval::SampleAudit audit;
  std::vector<std::string> saved;
  const auto ro = saving_runs(out, audit, saved);
  std::vector<eval::MetricsRecord> records;
  for (auto m : r.cfg.methods) {
    records.push_back(eval::run_method(m, r.cfg.protocol, data.protocol(), r.cfg.train, ro).record);
    std::cout << records.back().method << " average " << io::format_double(records.back().average) << '\n';
  }
  require_clean(audit);
  for (const auto& s : saved) out.record(s);
  nlohmann::json archive = {{"config_sha256", r.cfg.hash}, {"audit", audit_json(audit)}, {"records", nlohmann::json::array()}};
  for (const auto& rec : records) archive["records"].push_back(eval::to_json(rec));
  out.text("results.csv", eval::results_table_csv(records));
  out.json("results.json", archive);
  write_manifest(out, r);
  std::cout << eval::results_table_csv(records);
}

void cmd_ablate(const Options& opts) {
  auto r = start("ablate", opts);
  const auto data = load_data(r);
  OutputDir out(opts.out);
  eval::SampleAudit audit;
  std::vector<std::string> saved;
  const auto rows = eval::ablation_grid(r.cfg.protocol, data.protocol(), r.cfg.train, saving_runs(out, audit, saved));
  require_clean(audit);
  for (const auto& s : saved) out.record(s);
  std::vector<eval::MetricsRecord> records;
  nlohmann::json archive = {{"config_sha256", r.cfg.hash}, {"audit", audit_json(audit)}, {"records", nlohmann::json::array()}};
  for (const auto& row : rows) {
    records.push_back(row.record);
    archive["records"].push_back(eval::to_json(row.record));
  }
  const auto table = eval::ablation_csv(rows);
  out.text("ablation.csv", table);
  out.text("results.csv", eval::results_table_csv(records));
  out.json("results.json", archive);
  write_manifest(out, r);
  std::cout << table;
}

void cmd_sweep(const Options& opts) {
  auto r = start("sweep", opts);
  const auto param = eval::sweep_param_from_name(opts.sweep_param);
  require(!opts.sweep_values.empty(), ErrorKind::Usage, "--values needs at least one value");
  const auto data = load_data(r);
  OutputDir out(opts.out);
  eval::SampleAudit audit;
  std::vector<std::string> saved;
  const auto points =
      eval::sweep(param, opts.sweep_values, r.cfg.protocol, data.protocol(), r.cfg.train, saving_runs(out, audit, saved));
  require_clean(audit);
  for (const auto& s : saved) out.record(s);
  nlohmann::json archive = {{"config_sha256", r.cfg.hash},
                            {"param", eval::sweep_param_name(param)},
                            {"audit", audit_json(audit)},
                            {"points", nlohmann::json::array()}};
  for (const auto& pt : points) archive["points"].push_back({{"value", pt.value}, {"record", eval::to_json(pt.run.record)}});
  const auto table = eval::sweep_csv(param, points);
  out.text("sweep.csv", table);
  out.json("results.json", archive);
  write_manifest(out, r);
  std::cout << table;
}

void cmd_divergence(const Options& opts) {
  auto r = start("divergence", opts);
  require(opts.checkpoints.size() == 1, ErrorKind::Usage, "divergence needs exactly one --checkpoint");
  const auto ckpt = load_checkpoint_arg(opts.checkpoints.front(), r);
  const auto data = load_data(r);
  check_fits(ckpt, data.train, opts.checkpoints.front());
  const auto& p = r.cfg.protocol;
  const auto split = eval::protocol_split(p, data.protocol());

  eval::BoundOptions bo;
  bo.proxy.seed = r.cfg.train.seed;
  const auto bound = eval::bound_report(ckpt, data.train, p.train_receivers, p.test_receivers, bo);
  eval::ProbeOptions po;
  po.seed = r.cfg.train.seed;
  const auto probes = eval::probe_disentanglement(ckpt, data.train, split.train, p.train_receivers, po);

  OutputDir out(opts.out);
  std::ostringstream csv;
  csv << "space,epsilon,gamma\n";
  for (const auto* rep : {&bound.raw, &bound.z_star})
    csv << eval::feature_space_name(rep->space) << ',' << io::format_double(rep->epsilon) << ','
        << io::format_double(rep->gamma) << '\n';
  out.text("divergence.csv", csv.str());
  out.json("divergence.json",
           {{"config_sha256", r.cfg.hash}, {"bound", eval::to_json(bound)}, {"probes", eval::to_json(probes)}});
  write_manifest(out, r);
  std::cout << csv.str();
}

}  // namespace drift::cli
