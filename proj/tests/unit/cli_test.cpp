#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "drift/cli/commands.hpp"
#include "drift/cli/config.hpp"
#include "drift/errors.hpp"

namespace fs = std::filesystem;
using namespace drift;
using namespace drift::cli;

namespace {

const fs::path kBin = DRIFT_BIN;
const fs::path kConfigs = fs::path(DRIFT_SOURCE_DIR) / "configs";

fs::path workdir() {
  static const fs::path dir = [] {
    const auto d = fs::path(DRIFT_WORK_DIR) / "cli_work";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

struct Run {
  int code = -1;
  std::string err;
};

Run drift_cmd(const std::string& args, const std::string& env = "") {
  const auto err = workdir() / "stderr.txt";
  const std::string cmd = env + " " + kBin.string() + " " + args + " >/dev/null 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = read_file(err);
  return r;
}

std::string smoke() { return (kConfigs / "smoke.json").string(); }

std::string config_error(const nlohmann::json& j) {
  try {
    parse_config_json(j);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
    return e.what();
  }
  FAIL("expected a config error");
  return {};
}

}  // namespace

TEST_CASE("exit codes partition the error categories") {
  const ErrorKind kinds[] = {ErrorKind::Usage,  ErrorKind::Config,          ErrorKind::Format,
                             ErrorKind::Io,     ErrorKind::ArchitectureMismatch, ErrorKind::Numeric,
                             ErrorKind::Shape};
  std::set<int> codes;
  for (auto k : kinds) codes.insert(exit_code(k));
  CHECK(codes.size() == 7);
  CHECK(codes.count(0) == 0);
  CHECK(exit_code(ErrorKind::Usage) == 2);
  CHECK(exit_code(ErrorKind::Config) == 3);
  CHECK(exit_code(ErrorKind::Io) == 4);
  CHECK(exit_code(ErrorKind::Format) == 5);
  CHECK(exit_code(ErrorKind::ArchitectureMismatch) == 6);
  CHECK(exit_code(ErrorKind::Numeric) == 7);
  CHECK(exit_code(ErrorKind::Label) == exit_code(ErrorKind::Shape));
  CHECK(exit_code(ErrorKind::DegenerateBatch) == exit_code(ErrorKind::Shape));
  CHECK(error_category(ErrorKind::ArchitectureMismatch) == "architecture-mismatch");

  CHECK(guarded([] {}) == 0);
  CHECK(guarded([] { fail(ErrorKind::Io, "x"); }) == 4);
  CHECK(guarded([] { throw std::runtime_error("boom"); }) == 1);
}

TEST_CASE("shipped configs") {
  const auto paper = parse_config(kConfigs / "paper_defaults.json");
  CHECK(paper.train.batch_size == 64);
  CHECK(paper.train.learning_rate == 1e-4);
  CHECK(paper.train.weights == objective::Weights{1.0, 0.01, 0.02});
  CHECK(paper.train.preset == model::Preset::Paper);

  const auto bench = parse_config(kConfigs / "benchmark.json");
  CHECK(bench.generator.num_transmitters == 6);
  CHECK(bench.generator.num_receivers == 5);
  CHECK(bench.generator.samples_per_pair == 400);
  CHECK(bench.protocol.test_receivers.size() == 2);
  CHECK(bench.protocol.seeds == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(bench.train.preset == model::Preset::Desk);
  CHECK(bench.train.feature_clamp == 0.0);

  const auto s = parse_config(smoke());
  CHECK(s.hash.size() == 64);
  CHECK(parse_config(smoke()).hash == s.hash);
  CHECK(parse_config_json(s.canonical).hash == s.hash);
}

TEST_CASE("schema violations") {
  const auto empty = config_error(nlohmann::json::object());
  for (const char* section : {"generator", "model", "train", "protocol"}) CHECK(empty.find(section) != std::string::npos);

  const auto path = workdir() / "empty.json";
  write_file(path, "");
  try {
    parse_config(path);
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
    CHECK(std::string(e.what()).find("protocol") != std::string::npos);
  }

  auto j = nlohmann::json::parse(read_file(smoke()));
  j["train"]["lambda4"] = 0.5;
  j["train"].erase("seed");
  j["generator"]["K"] = "six";
  const auto many = config_error(j);
  CHECK(many.find("train.lambda4") != std::string::npos);
  CHECK(many.find("train.seed") != std::string::npos);
  CHECK(many.find("generator.K") != std::string::npos);

  auto neg = nlohmann::json::parse(read_file(smoke()));
  neg["train"]["lambda2"] = -1.0;
  config_error(neg);

  auto overlap = nlohmann::json::parse(read_file(smoke()));
  overlap["protocol"]["test_receivers"] = {1};
  config_error(overlap);

  try {
    parse_config(workdir() / "missing.json");
    FAIL("expected an io error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Io);
  }
}

TEST_CASE("end-to-end commands") {
  const auto d = workdir();
  REQUIRE(drift_cmd("generate --config " + smoke() + " --out " + (d / "gen").string()).code == 0);
  const auto ds = d / "gen" / "ds.bin";
  REQUIRE(fs::exists(ds));
  CHECK(fs::exists(d / "gen" / "manifest.json"));
  const auto ds_bytes = read_file(ds);

  // Identical config and seed give identical bytes, with or without threads.
  REQUIRE(drift_cmd("generate --config " + smoke() + " --out " + (d / "gen2").string(), "DRIFT_THREADS=2").code == 0);
  CHECK(read_file(d / "gen2" / "ds.bin") == ds_bytes);
  REQUIRE(drift_cmd("generate --config " + smoke() + " --out " + (d / "gen3").string() + " --seed 99").code == 0);
  CHECK(read_file(d / "gen3" / "ds.bin") != ds_bytes);

  const std::string train_args = "train --config " + smoke() + " --data " + ds.string() + " --out ";
  REQUIRE(drift_cmd(train_args + (d / "train").string()).code == 0);
  REQUIRE(drift_cmd(train_args + (d / "train2").string()).code == 0);
  CHECK(read_file(ds) == ds_bytes);
  for (const char* f : {"train_metrics.csv", "epoch_metrics.csv", "checkpoints/epoch_0001.ckpt",
                        "checkpoints/epoch_0002.ckpt"}) {
    INFO(f);
    REQUIRE(fs::exists(d / "train" / f));
    CHECK(read_file(d / "train" / f) == read_file(d / "train2" / f));
  }
  std::istringstream metrics(read_file(d / "train" / "train_metrics.csv"));
  std::string header;
  std::getline(metrics, header);
  CHECK(header == "step,ce_tx,ce_rx,grl,center,mse,total");

  const auto manifest = nlohmann::json::parse(read_file(d / "train" / "manifest.json"));
  CHECK(manifest.at("config_sha256") == parse_config(smoke()).hash);
  CHECK(manifest.contains("version"));
  CHECK(manifest.contains("seed"));
  CHECK(manifest.at("inputs").dump().find(ds.filename().string()) != std::string::npos);
  CHECK(!fs::exists(d / "train" / ".lock"));

  const auto ck = d / "train" / "checkpoints" / "epoch_0002.ckpt";
  const auto eval = drift_cmd("eval --config " + smoke() + " --data " + ds.string() + " --checkpoint " + ck.string() +
                              " --out " + (d / "eval").string());
  CHECK(eval.code == 0);
  CHECK(fs::exists(d / "eval" / "results.csv"));
  CHECK(fs::exists(d / "eval" / "results.json"));

  const auto missing = drift_cmd("eval --config " + smoke() + " --data " + ds.string() + " --checkpoint nope.ckpt --out " +
                                 (d / "eval_missing").string());
  CHECK(missing.code == 4);
  CHECK(missing.err.find("error: io: checkpoint not found: nope.ckpt") != std::string::npos);

  // A checkpoint trained on three transmitters does not fit four.
  auto four = nlohmann::json::parse(read_file(smoke()));
  four["generator"]["K"] = 4;
  const auto four_path = d / "four.json";
  write_file(four_path, four.dump());
  const auto mismatch =
      drift_cmd("eval --config " + four_path.string() + " --checkpoint " + ck.string() + " --out " + (d / "eval_k4").string());
  CHECK(mismatch.code == 6);
  CHECK(mismatch.err.rfind("error: architecture-mismatch:", 0) == 0);

  auto truncated = read_file(ck);
  truncated.resize(truncated.size() / 2);
  write_file(d / "cut.ckpt", truncated);
  CHECK(drift_cmd("eval --config " + smoke() + " --data " + ds.string() + " --checkpoint " + (d / "cut.ckpt").string() +
                  " --out " + (d / "eval_cut").string())
            .code == 5);

  CHECK(drift_cmd("train --config " + smoke() + " --data " + ds.string() + " --resume " + ck.string() + " --out " +
                  (d / "resumed").string())
            .code == 0);
}

TEST_CASE("usage, config and lock errors") {
  const auto d = workdir();
  CHECK(drift_cmd("").code == 2);
  const auto bogus = drift_cmd("frobnicate");
  CHECK(bogus.code == 2);
  CHECK(bogus.err.rfind("error: usage:", 0) == 0);
  CHECK(drift_cmd("generate --config " + smoke()).code == 2);

  auto j = nlohmann::json::parse(read_file(smoke()));
  j["train"]["lambda4"] = 1.0;
  write_file(d / "bad.json", j.dump());
  const auto bad = drift_cmd("train --config " + (d / "bad.json").string() + " --out " + (d / "bad").string());
  CHECK(bad.code == 3);
  CHECK(bad.err.find("train.lambda4") != std::string::npos);
  CHECK(drift_cmd("train --config " + (d / "nothing.json").string() + " --out " + (d / "x").string()).code == 4);

  fs::create_directories(d / "locked");
  write_file(d / "locked" / ".lock", "");
  const auto locked = drift_cmd("generate --config " + smoke() + " --out " + (d / "locked").string());
  CHECK(locked.code == 4);
  CHECK(!fs::exists(d / "locked" / "ds.bin"));
}

TEST_CASE("protocol commands") {
  const auto d = workdir();
  const std::string cfg = " --config " + smoke() + " --out ";

  REQUIRE(drift_cmd("eval" + cfg + (d / "protocol").string()).code == 0);
  const auto results = nlohmann::json::parse(read_file(d / "protocol" / "results.json"));
  CHECK(results.at("audit").at("test_receiver_samples") == 0);
  CHECK(fs::exists(d / "protocol" / "checkpoints" / "DRIFT" / "seed1.ckpt"));
  std::istringstream table(read_file(d / "protocol" / "results.csv"));
  std::string header;
  std::getline(table, header);
  CHECK(header.find("DRIFT") != std::string::npos);
  CHECK(header.find("ERM") != std::string::npos);

  REQUIRE(drift_cmd("ablate" + cfg + (d / "ablate").string()).code == 0);
  std::istringstream rows(read_file(d / "ablate" / "ablation.csv"));
  std::vector<std::string> names;
  for (std::string l; std::getline(rows, l);) names.push_back(l.substr(0, l.find(',')));
  REQUIRE(names.size() == 9);
  CHECK(names[1] == "Basic Model");
  CHECK(names[8] == "Full Model");

  REQUIRE(drift_cmd("sweep" + cfg + (d / "sweep").string() + " --param lambda1 --values 2,0.5").code == 0);
  std::istringstream sweep(read_file(d / "sweep" / "sweep.csv"));
  std::vector<std::string> lines;
  for (std::string l; std::getline(sweep, l);) lines.push_back(l);
  REQUIRE(lines.size() == 3);
  CHECK(lines[1].rfind("2,", 0) == 0);
  CHECK(lines[2].rfind("0.5,", 0) == 0);
  CHECK(drift_cmd("sweep" + cfg + (d / "sweep_bad").string() + " --param lambda4 --values 1").code == 3);

  const auto ck = d / "protocol" / "checkpoints" / "DRIFT" / "seed1.ckpt";
  REQUIRE(drift_cmd("divergence" + cfg + (d / "div").string() + " --checkpoint " + ck.string()).code == 0);
  const auto div = nlohmann::json::parse(read_file(d / "div" / "divergence.json"));
  CHECK(div.dump().find("uniform-mixture proxy") != std::string::npos);
  CHECK(fs::exists(d / "div" / "divergence.csv"));
}
