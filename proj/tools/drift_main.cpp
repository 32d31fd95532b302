#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "drift/cli/commands.hpp"
#include "drift/kernels/kernels.hpp"

#ifndef DRIFT_VERSION
#define DRIFT_VERSION "dev"
#endif

int main(int argc, char** argv) {
  using drift::cli::Options;
  Options opts;
  for (int i = 0; i < argc; ++i) opts.argv.emplace_back(argv[i]);

  CLI::App app{"Cross-receiver RF fingerprinting experiments"};
  app.set_version_flag("--version", DRIFT_VERSION);
  app.require_subcommand(1);

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config, "experiment config (JSON)")->required();
    sub->add_option("--out", opts.out, "output directory")->required();
    sub->add_option("--seed", opts.seed, "override the seed (generator seed for generate, training seeds otherwise)");
  };
  auto data = [&](CLI::App* sub) {
    sub->add_option("--data", opts.data, "dataset file instead of generating from the config");
    sub->add_option("--test-data", opts.test_data, "test dataset for a nonzero protocol.test_day");
  };

  auto* gen = app.add_subcommand("generate", "generate a synthetic dataset");
  common(gen);
  auto* tr = app.add_subcommand("train", "train protocol.train method on the training receivers");
  common(tr);
  data(tr);
  tr->add_option("--resume", opts.resume, "checkpoint to continue from");
  auto* ev = app.add_subcommand("eval", "evaluate checkpoints, or run every protocol method when none are given");
  common(ev);
  data(ev);
  ev->add_option("--checkpoint", opts.checkpoints, "checkpoint(s) to evaluate; averaged when several");
  auto* ab = app.add_subcommand("ablate", "run the 8-row ablation grid");
  common(ab);
  data(ab);
  auto* sw = app.add_subcommand("sweep", "vary one loss weight");
  common(sw);
  data(sw);
  sw->add_option("--param", opts.sweep_param, "lambda1, lambda2 or lambda3")->required();
  sw->add_option("--values", opts.sweep_values, "values in order")->required()->delimiter(',');
  auto* dv = app.add_subcommand("divergence", "proxy divergences and probes of a checkpoint");
  common(dv);
  data(dv);
  dv->add_option("--checkpoint", opts.checkpoints, "checkpoint to analyze")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: usage: " << e.what() << '\n';
    return drift::cli::exit_code(drift::ErrorKind::Usage);
  }

  drift::kernels::configure_threads_from_env();
  return drift::cli::guarded([&] {
    if (gen->parsed()) drift::cli::cmd_generate(opts);
    if (tr->parsed()) drift::cli::cmd_train(opts);
    if (ev->parsed()) drift::cli::cmd_eval(opts);
    if (ab->parsed()) drift::cli::cmd_ablate(opts);
    if (sw->parsed()) drift::cli::cmd_sweep(opts);
    if (dv->parsed()) drift::cli::cmd_divergence(opts);
  });
}
