#include "ccnn/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include "byte_io.hpp"
#include "ccnn/errors.hpp"

namespace ccnn {
namespace {

constexpr std::string_view kMagic = "CCN1";

using Kind = CheckpointError::Kind;

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params, const CCNNConfig& config) {
  const auto expected = layer_shapes(config);
  if (params.layers.size() != expected.size()) {
    throw InvalidArgument("save_checkpoint: parameters do not match the model config");
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (params.layers[i].layer.weights.size() != expected[i].weights.size() ||
        params.layers[i].layer.bias.size() != expected[i].bias.size()) {
      throw InvalidArgument("save_checkpoint: layer " + params.layers[i].name + " does not match the config");
    }
  }

  const std::string manifest = config_to_json(config);
  std::vector<std::uint8_t> out;
  detail::put_bytes(out, kMagic);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(manifest.size()));
  detail::put_bytes(out, manifest);
  for (const NamedLayer& l : params.layers) {
    detail::put_f32s(out, l.layer.weights);
    detail::put_f32s(out, l.layer.bias);
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader in(bytes);
  std::string magic;
  if (!in.read_bytes(kMagic.size(), magic)) throw CheckpointError(Kind::truncated, "checkpoint truncated in header");
  if (magic != kMagic) throw CheckpointError(Kind::bad_magic, "checkpoint has bad magic");

  std::uint32_t version = 0;
  if (!in.read_u32(version)) throw CheckpointError(Kind::truncated, "checkpoint truncated in header");
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::bad_version, "unsupported checkpoint version " + std::to_string(version));
  }

  std::uint32_t manifest_size = 0;
  std::string manifest;
  if (!in.read_u32(manifest_size) || !in.read_bytes(manifest_size, manifest)) {
    throw CheckpointError(Kind::truncated, "checkpoint truncated in config manifest");
  }

  Checkpoint ckpt;
  try {
    ckpt.config = config_from_json(manifest);
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::manifest_mismatch, std::string("checkpoint manifest invalid: ") + e.what());
  }

  ckpt.params = zero_params(ckpt.config);
  for (NamedLayer& l : ckpt.params.layers) {
    if (!in.read_f32s(l.layer.weights) || !in.read_f32s(l.layer.bias)) {
      throw CheckpointError(Kind::truncated, "checkpoint truncated in layer " + l.name);
    }
  }
  if (in.remaining() != 0) {
    throw CheckpointError(Kind::manifest_mismatch,
                          "checkpoint holds " + std::to_string(in.remaining()) +
                              " bytes beyond the layers its manifest declares");
  }
  return ckpt;
}

void save_checkpoint(const ModelParams& params, const CCNNConfig& config, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(params, config);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(Kind::io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(Kind::io, "failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::io, "cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace ccnn
