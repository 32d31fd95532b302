#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "drift/errors.hpp"

namespace drift::cli {

// Exit codes, one per error class:
//   0 ok, 1 internal, 2 usage, 3 config, 4 io, 5 format,
//   6 architecture-mismatch, 7 numeric, 8 data (shape, label, degenerate batch).
int exit_code(ErrorKind kind) noexcept;
std::string_view error_category(ErrorKind kind) noexcept;

struct Options {
  std::filesystem::path config;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;            // overrides train.seed and the protocol seeds
  std::optional<std::filesystem::path> data;    // dataset instead of generating one
  std::optional<std::filesystem::path> test_data;
  std::optional<std::filesystem::path> resume;  // train: continue from this checkpoint
  std::vector<std::filesystem::path> checkpoints;
  std::string sweep_param;
  std::vector<double> sweep_values;
  std::vector<std::string> argv;                // recorded in the manifest
};

void cmd_generate(const Options& opts);
void cmd_train(const Options& opts);
void cmd_eval(const Options& opts);
void cmd_ablate(const Options& opts);
void cmd_sweep(const Options& opts);
void cmd_divergence(const Options& opts);

// Runs `fn`; on failure prints "error: <category>: <message>" to stderr and
// returns the category's exit code.
int guarded(const std::function<void()>& fn);

}  // namespace drift::cli
