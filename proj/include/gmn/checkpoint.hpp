#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gmn/model.hpp"

namespace gmn {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct CheckpointMeta {
  std::int64_t step = 0;
  TrainMode mode = TrainMode::Pretrain;
  nlohmann::json extra = nlohmann::json::object();
};

/// Archive layout: 8-byte magic "GMNCKPT\0", u32 format version, u32
/// reserved, u64 header length, JSON header (model config, meta and a
/// tensor index of name/kind/dtype/shape/offset), then raw little-endian
/// tensor data. Parameters and buffers (normalisation statistics) are both
/// stored under their module path, e.g. "image_stream.stage2.0.adapter.weight".
std::vector<std::uint8_t> serialize_checkpoint(GmnNetworkImpl& net, const CheckpointMeta& meta);
void save_checkpoint(GmnNetworkImpl& net, const std::string& path, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  GmnNetwork net{nullptr};
  CheckpointMeta meta;
  std::string id;  // SHA-256 of the archive bytes
};

LoadedCheckpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);
LoadedCheckpoint load_checkpoint(const std::string& path);

/// Lower-case hex SHA-256.
std::string sha256_hex(const void* data, std::size_t size);

}  // namespace gmn
