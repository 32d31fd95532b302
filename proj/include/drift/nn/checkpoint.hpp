#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "drift/nn/adam.hpp"
#include "drift/nn/params.hpp"

namespace drift::nn {

inline constexpr char kCheckpointMagic[8] = {'D', 'R', 'I', 'F', 'T', 'C', 'K', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: magic "DRIFTCK1" | u32 version | u64 manifest length | manifest
// JSON | f32 parameter payload in manifest order | optional Adam moments
// (m then v per trainable parameter) | magic again as end marker.
// The manifest carries {meta, params: [{name, shape, dtype, trainable}],
// adam: {step, lr, beta1, beta2, eps} | null}.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  ParamStore<float> params;
  std::optional<AdamState<float>> adam;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes, const std::string& origin);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace drift::nn
