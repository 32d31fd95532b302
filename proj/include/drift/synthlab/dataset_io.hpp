#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "drift/synthlab/generator.hpp"

namespace drift::synth {

inline constexpr char kDatasetMagic[8] = {'D', 'R', 'I', 'F', 'T', 'D', 'S', '1'};
inline constexpr std::uint32_t kDatasetVersion = 1;

// Header: magic "DRIFTDS1", u32 version, u32 K, u32 M, u32 L, u64 count.
// Records: u16 y, u16 d (both 0-based), 2*L f32 (I row then Q row).
// All little-endian.
std::vector<std::uint8_t> encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::span<const std::uint8_t> bytes, const std::string& origin);

// Writes the container and a JSON sidecar (`<path>.json`) holding the
// generator config used for provenance.
void save_dataset(const std::filesystem::path& path, const Dataset& ds, const GeneratorConfig& cfg);
Dataset load_dataset(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& dataset_path);

}  // namespace drift::synth
