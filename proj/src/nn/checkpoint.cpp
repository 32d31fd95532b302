#include "drift/nn/checkpoint.hpp"

#include <cstring>

#include "drift/io.hpp"

namespace drift::nn {

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json manifest;
  manifest["meta"] = ckpt.meta;
  manifest["params"] = nlohmann::json::array();
  for (const auto& p : ckpt.params) {
    manifest["params"].push_back(
        {{"name", p.name}, {"shape", p.value.shape()}, {"dtype", "f32"}, {"trainable", p.trainable}});
  }
  if (ckpt.adam) {
    const auto& a = *ckpt.adam;
    manifest["adam"] = {{"step", a.step}, {"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}};
  } else {
    manifest["adam"] = nullptr;
  }
  const std::string text = manifest.dump();

  io::ByteWriter w;
  w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.scalar<std::uint32_t>(kCheckpointVersion);
  w.scalar<std::uint64_t>(text.size());
  w.text(text);
  for (const auto& p : ckpt.params) w.array(p.value.values());
  if (ckpt.adam) {
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
      if (!ckpt.params[i].trainable) continue;
      w.array(ckpt.adam->m[i].values());
      w.array(ckpt.adam->v[i].values());
    }
  }
  w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  return std::move(w.buffer());
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes, const std::string& origin) {
  io::ByteReader r(bytes, origin);
  char magic[8];
  r.bytes(magic, sizeof(magic));
  require(std::memcmp(magic, kCheckpointMagic, sizeof(magic)) == 0, ErrorKind::Format,
          origin + ": not a checkpoint (bad magic)");
  const auto version = r.scalar<std::uint32_t>();
  require(version == kCheckpointVersion, ErrorKind::Format,
          origin + ": unsupported checkpoint version " + std::to_string(version));
  const auto len = r.scalar<std::uint64_t>();
  require(len <= r.remaining(), ErrorKind::Format, origin + ": truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(r.text(static_cast<std::size_t>(len)));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, origin + ": corrupt manifest: " + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.meta = manifest.at("meta");
    for (const auto& entry : manifest.at("params")) {
      require(entry.at("dtype").get<std::string>() == "f32", ErrorKind::Format,
              origin + ": unsupported dtype for " + entry.at("name").get<std::string>());
      Shape shape = entry.at("shape").get<Shape>();
      Tensor<float> t(shape);
      r.array(t.values());
      ckpt.params.add(entry.at("name").get<std::string>(), std::move(t), entry.at("trainable").get<bool>());
    }
    if (!manifest.at("adam").is_null()) {
      const auto& a = manifest.at("adam");
      AdamState<float> s = make_adam(ckpt.params, a.at("lr").get<double>());
      s.step = a.at("step").get<std::uint64_t>();
      s.beta1 = a.at("beta1").get<double>();
      s.beta2 = a.at("beta2").get<double>();
      s.eps = a.at("eps").get<double>();
      for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
        if (!ckpt.params[i].trainable) continue;
        r.array(s.m[i].values());
        r.array(s.v[i].values());
      }
      ckpt.adam = std::move(s);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, origin + ": malformed manifest: " + e.what());
  }
  r.bytes(magic, sizeof(magic));
  require(std::memcmp(magic, kCheckpointMagic, sizeof(magic)) == 0 && r.remaining() == 0,
          ErrorKind::Format, origin + ": corrupt trailer");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  io::write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path, "checkpoint");
  return deserialize_checkpoint(bytes, path.string());
}

}  // namespace drift::nn
