#include "drift/synthlab/dataset_io.hpp"

#include <cstring>

#include "drift/io.hpp"

namespace drift::synth {

std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  io::ByteWriter w;
  w.bytes(kDatasetMagic, sizeof(kDatasetMagic));
  w.scalar<std::uint32_t>(kDatasetVersion);
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(ds.num_transmitters));
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(ds.num_receivers));
  w.scalar<std::uint32_t>(static_cast<std::uint32_t>(ds.length));
  w.scalar<std::uint64_t>(ds.size());
  w.buffer().reserve(w.buffer().size() + ds.size() * (4 + 8 * ds.length));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    w.scalar<std::uint16_t>(ds.tx[i]);
    w.scalar<std::uint16_t>(ds.rx[i]);
    w.array(ds.frame(i));
  }
  return std::move(w.buffer());
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes, const std::string& origin) {
  io::ByteReader r(bytes, origin);
  char magic[8];
  r.bytes(magic, sizeof(magic));
  require(std::memcmp(magic, kDatasetMagic, sizeof(magic)) == 0, ErrorKind::Format,
          origin + ": not a dataset file (bad magic)");
  const auto version = r.scalar<std::uint32_t>();
  require(version == kDatasetVersion, ErrorKind::Format,
          origin + ": unsupported dataset version " + std::to_string(version));
  Dataset ds;
  ds.num_transmitters = r.scalar<std::uint32_t>();
  ds.num_receivers = r.scalar<std::uint32_t>();
  ds.length = r.scalar<std::uint32_t>();
  const auto count = r.scalar<std::uint64_t>();
  require(ds.length > 0, ErrorKind::Format, origin + ": zero frame length");
  const std::uint64_t record = 4 + 8 * static_cast<std::uint64_t>(ds.length);
  require(count <= r.remaining() / record && r.remaining() == count * record, ErrorKind::Format,
          origin + ": record section size does not match header count " + std::to_string(count));
  ds.frames.resize(count * 2 * ds.length);
  ds.tx.resize(count);
  ds.rx.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    ds.tx[i] = r.scalar<std::uint16_t>();
    ds.rx[i] = r.scalar<std::uint16_t>();
    require(ds.tx[i] < ds.num_transmitters && ds.rx[i] < ds.num_receivers, ErrorKind::Format,
            origin + ": label out of range in record " + std::to_string(i));
    r.array(std::span<float>(ds.frames.data() + i * 2 * ds.length, 2 * ds.length));
  }
  return ds;
}

std::filesystem::path sidecar_path(const std::filesystem::path& dataset_path) {
  auto p = dataset_path;
  p += ".json";
  return p;
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds, const GeneratorConfig& cfg) {
  io::write_file_atomic(path, encode_dataset(ds));
  io::write_text_atomic(sidecar_path(path), to_json(cfg).dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path, "dataset");
  return decode_dataset(bytes, path.string());
}

}  // namespace drift::synth
