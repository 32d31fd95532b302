#include "drift/eval/protocol.hpp"

#include <algorithm>
#include <exception>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "drift/errors.hpp"
#include "drift/io.hpp"
#include "drift/kernels/kernels.hpp"

namespace drift::eval {

void ProtocolSpec::validate(std::size_t num_receivers) const {
  std::vector<std::string> problems;
  if (train_receivers.empty()) problems.push_back("train_receivers is empty");
  if (test_receivers.empty()) problems.push_back("test_receivers is empty");
  if (seeds.empty()) problems.push_back("seeds is empty");
  std::set<int> seen;
  for (int r : train_receivers) {
    if (r < 0 || static_cast<std::size_t>(r) >= num_receivers)
      problems.push_back("train receiver " + std::to_string(r) + " out of range");
    if (!seen.insert(r).second) problems.push_back("train receiver " + std::to_string(r) + " listed twice");
  }
  for (int r : test_receivers) {
    if (r < 0 || static_cast<std::size_t>(r) >= num_receivers)
      problems.push_back("test receiver " + std::to_string(r) + " out of range");
    if (std::find(train_receivers.begin(), train_receivers.end(), r) != train_receivers.end())
      problems.push_back("receiver " + std::to_string(r) + " is both a train and a test receiver");
  }
  if (!problems.empty()) {
    std::string msg = "invalid protocol:";
    for (const auto& p : problems) msg += "\n  " + p;
    fail(ErrorKind::Config, msg);
  }
}

nlohmann::json to_json(const ProtocolSpec& p) {
  return {{"train_receivers", p.train_receivers},
          {"test_receivers", p.test_receivers},
          {"seeds", p.seeds},
          {"test_day", p.test_day}};
}

ProtocolSplit protocol_split(const ProtocolSpec& p, const ProtocolData& data) {
  require(data.train && data.test, ErrorKind::Usage, "protocol data is missing");
  p.validate(data.train->num_receivers);
  require(data.test->num_receivers == data.train->num_receivers &&
              data.test->num_transmitters == data.train->num_transmitters && data.test->length == data.train->length,
          ErrorKind::Usage, "training and test datasets disagree on K, M or L");
  const auto tr = synth::split_by_receivers(*data.train, p.train_receivers, p.test_receivers);
  if (data.test == data.train) return {tr.train, tr.test};
  const auto te = synth::split_by_receivers(*data.test, p.train_receivers, p.test_receivers);
  return {tr.train, te.test};
}

namespace {

template <typename Fn>
void run_parallel(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      // Kernels stay serial inside concurrent runs; results are identical.
      kernels::ScopedExec serial(kernels::Exec::Serial);
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

MethodRun run_config(const std::string& label, const train::TrainConfig& cfg, const ProtocolSpec& p,
                     const ProtocolData& data, const RunOptions& opts) {
  cfg.validate();
  const auto split = protocol_split(p, data);
  const auto set = train::make_train_set(*data.train, split.train, p.train_receivers);
  std::vector<int> is_test(data.train->num_receivers, 0);
  for (int r : p.test_receivers) is_test[static_cast<std::size_t>(r)] = 1;

  MethodRun out;
  out.runs.resize(p.seeds.size());
  std::mutex callback_mutex;
  run_parallel(p.seeds.size(), opts.parallel_runs, [&](std::size_t k) {
    auto run_cfg = cfg;
    run_cfg.seed = p.seeds[k];
    train::TrainHooks hooks;
    if (opts.audit) {
      hooks.on_batch = [&](std::span<const std::size_t> ids) {
        std::size_t bad = 0;
        for (auto i : ids) bad += is_test[data.train->rx[i]];
        opts.audit->batches += 1;
        opts.audit->samples += ids.size();
        opts.audit->violations += bad;
      };
    }
    RunArtifacts art;
    art.seed = run_cfg.seed;
    art.result = train::train(set, run_cfg, hooks);
    art.eval = evaluate(art.result.checkpoints, *data.test, split.test, p.test_receivers);
    if (opts.on_run) {
      std::lock_guard lock(callback_mutex);
      opts.on_run(label, art);
    }
    out.runs[k] = std::move(art);
  });

  std::vector<SeedResult> seeds;
  for (const auto& r : out.runs) seeds.push_back({r.seed, r.eval.per_receiver, r.eval.average});
  out.record = aggregate(label, p.test_receivers, seeds, out.runs.front().result.checkpoints.size());
  return out;
}

MethodRun run_method(train::Method method, const ProtocolSpec& p, const ProtocolData& data,
                     const train::TrainConfig& base, const RunOptions& opts) {
  auto cfg = base;
  cfg.method = method;
  return run_config(train::method_name(method), cfg, p, data, opts);
}

std::vector<AblationCell> ablation_cells() {
  return {
      {"Basic Model", false, false, false}, {"+GRL", true, false, false},
      {"+Cen", false, true, false},         {"+MSE", false, false, true},
      {"+MSE+GRL", true, false, true},      {"+MSE+Cen", false, true, true},
      {"+GRL+Cen", true, true, false},      {"Full Model", true, true, true},
  };
}

train::TrainConfig ablation_config(const AblationCell& cell, const train::TrainConfig& base) {
  auto cfg = base;
  if (!cell.grl && !cell.center && !cell.mse) {
    cfg.method = train::Method::Mtl;
    return cfg;
  }
  cfg.method = train::Method::Drift;
  cfg.weights = {cell.grl ? base.weights.grl : 0.0, cell.center ? base.weights.center : 0.0,
                 cell.mse ? base.weights.mse : 0.0};
  return cfg;
}

std::vector<MethodRun> ablation_grid(const ProtocolSpec& p, const ProtocolData& data,
                                     const train::TrainConfig& base, const RunOptions& opts) {
  std::vector<MethodRun> rows;
  for (const auto& cell : ablation_cells()) rows.push_back(run_config(cell.name, ablation_config(cell, base), p, data, opts));
  return rows;
}

std::string ablation_csv(std::span<const MethodRun> rows) {
  require(!rows.empty(), ErrorKind::Usage, "ablation table needs rows");
  const auto cells = ablation_cells();
  std::ostringstream os;
  os << "model,grl,cen,mse";
  for (int r : rows.front().record.test_receivers) os << ",rx" << r;
  os << ",average,seed_std\n";
  for (const auto& row : rows) {
    const auto it = std::find_if(cells.begin(), cells.end(),
                                 [&](const AblationCell& c) { return c.name == row.record.method; });
    require(it != cells.end(), ErrorKind::Usage, "unknown ablation row " + row.record.method);
    os << row.record.method << ',' << it->grl << ',' << it->center << ',' << it->mse;
    for (double v : row.record.per_receiver) os << ',' << io::format_double(100.0 * v);
    os << ',' << io::format_double(100.0 * row.record.average) << ','
       << io::format_double(100.0 * row.record.seed_std()) << '\n';
  }
  return os.str();
}

SweepParam sweep_param_from_name(const std::string& name) {
  if (name == "lambda1") return SweepParam::Lambda1;
  if (name == "lambda2") return SweepParam::Lambda2;
  if (name == "lambda3") return SweepParam::Lambda3;
  fail(ErrorKind::Config, "unknown sweep parameter: " + name + " (expected lambda1, lambda2 or lambda3)");
}

std::string sweep_param_name(SweepParam p) {
  switch (p) {
    case SweepParam::Lambda1: return "lambda1";
    case SweepParam::Lambda2: return "lambda2";
    case SweepParam::Lambda3: return "lambda3";
  }
  return "?";
}

std::vector<SweepPoint> sweep(SweepParam param, std::span<const double> values, const ProtocolSpec& p,
                              const ProtocolData& data, const train::TrainConfig& base, const RunOptions& opts) {
  require(!values.empty(), ErrorKind::Config, "sweep needs at least one value");
  std::vector<SweepPoint> out;
  for (double v : values) {
    auto cfg = base;
    cfg.method = train::Method::Drift;
    switch (param) {
      case SweepParam::Lambda1: cfg.weights.grl = v; break;
      case SweepParam::Lambda2: cfg.weights.center = v; break;
      case SweepParam::Lambda3: cfg.weights.mse = v; break;
    }
    out.push_back({v, run_config(sweep_param_name(param) + "=" + io::format_double(v), cfg, p, data, opts)});
  }
  return out;
}

std::string sweep_csv(SweepParam param, std::span<const SweepPoint> points) {
  std::ostringstream os;
  os << sweep_param_name(param) << ",average,seed_std\n";
  for (const auto& pt : points) {
    os << io::format_double(pt.value) << ',' << io::format_double(100.0 * pt.run.record.average) << ','
       << io::format_double(100.0 * pt.run.record.seed_std()) << '\n';
  }
  return os.str();
}

}  // namespace drift::eval
