#include "gmn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include <openssl/evp.h>

#include "gmn/errors.hpp"

namespace gmn {
namespace {

constexpr char kMagic[8] = {'G', 'M', 'N', 'C', 'K', 'P', 'T', '\0'};
constexpr std::size_t kPreambleBytes = 8 + 4 + 4 + 8;

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
T get(const std::uint8_t* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

std::string dtype_name(const torch::Tensor& t) {
  if (t.scalar_type() == torch::kFloat32) return "f32";
  if (t.scalar_type() == torch::kFloat64) return "f64";
  if (t.scalar_type() == torch::kInt64) return "i64";
  throw InvalidArgument("unsupported tensor dtype in checkpoint");
}

torch::ScalarType dtype_from_name(const std::string& s) {
  if (s == "f32") return torch::kFloat32;
  if (s == "f64") return torch::kFloat64;
  if (s == "i64") return torch::kInt64;
  throw ParseError("unknown tensor dtype '" + s + "' in checkpoint", 0);
}

}  // namespace

std::string sha256_hex(const void* data, std::size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(data, size, digest, &length, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xF];
  }
  return out;
}

std::vector<std::uint8_t> serialize_checkpoint(GmnNetworkImpl& net, const CheckpointMeta& meta) {
  nlohmann::json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["model_config"] = net.config();
  header["step"] = meta.step;
  header["mode"] = to_string(meta.mode);
  header["extra"] = meta.extra;
  header["tensors"] = nlohmann::json::array();

  std::vector<std::pair<std::string, torch::Tensor>> tensors;
  std::vector<std::string> kinds;
  for (const auto& p : net.named_parameters()) {
    tensors.emplace_back(p.key(), p.value());
    kinds.emplace_back("parameter");
  }
  for (const auto& b : net.named_buffers()) {
    tensors.emplace_back(b.key(), b.value());
    kinds.emplace_back("buffer");
  }

  std::vector<std::uint8_t> data;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto t = tensors[i].second.detach().contiguous().cpu();
    const std::size_t bytes = t.numel() * t.element_size();
    header["tensors"].push_back({{"name", tensors[i].first},
                                 {"kind", kinds[i]},
                                 {"dtype", dtype_name(t)},
                                 {"shape", t.sizes().vec()},
                                 {"offset", data.size()},
                                 {"bytes", bytes}});
    const auto* src = static_cast<const std::uint8_t*>(t.data_ptr());
    data.insert(data.end(), src, src + bytes);
  }

  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put<std::uint32_t>(out, kCheckpointFormatVersion);
  put<std::uint32_t>(out, 0);
  put<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), data.begin(), data.end());
  return out;
}

void save_checkpoint(GmnNetworkImpl& net, const std::string& path, const CheckpointMeta& meta) {
  const auto bytes = serialize_checkpoint(net, meta);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("cannot write checkpoint " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot move checkpoint to " + path);
}

LoadedCheckpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kPreambleBytes || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw ParseError("not a GMN checkpoint", 0);
  }
  const auto version = get<std::uint32_t>(bytes.data() + 8);
  if (version != kCheckpointFormatVersion) {
    throw ParseError("unsupported checkpoint format version " + std::to_string(version), 0);
  }
  const auto header_len = get<std::uint64_t>(bytes.data() + 16);
  if (kPreambleBytes + header_len > bytes.size()) throw ParseError("truncated checkpoint header", 0);
  const auto header = nlohmann::json::parse(bytes.begin() + kPreambleBytes,
                                            bytes.begin() + kPreambleBytes + header_len);
  const std::uint8_t* data = bytes.data() + kPreambleBytes + header_len;
  const std::size_t data_len = bytes.size() - kPreambleBytes - header_len;

  LoadedCheckpoint out;
  out.net = GmnNetwork(header.at("model_config").get<ModelConfig>());
  out.meta.step = header.at("step").get<std::int64_t>();
  out.meta.mode = train_mode_from_string(header.at("mode").get<std::string>());
  out.meta.extra = header.value("extra", nlohmann::json::object());

  std::map<std::string, torch::Tensor> targets;
  for (const auto& p : out.net->named_parameters()) targets[p.key()] = p.value();
  for (const auto& b : out.net->named_buffers()) targets[b.key()] = b.value();

  torch::NoGradGuard guard;
  std::size_t restored = 0;
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto it = targets.find(name);
    if (it == targets.end()) throw ParseError("checkpoint tensor '" + name + "' has no target", 0);
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto len = entry.at("bytes").get<std::size_t>();
    if (offset + len > data_len) throw ParseError("tensor '" + name + "' exceeds archive", 0);
    const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    auto source = torch::empty(shape, torch::TensorOptions().dtype(dtype_from_name(entry.at("dtype"))));
    if (static_cast<std::size_t>(source.numel() * source.element_size()) != len) {
      throw ParseError("tensor '" + name + "' size mismatch", 0);
    }
    std::memcpy(source.data_ptr(), data + offset, len);
    if (source.sizes() != it->second.sizes()) throw ParseError("tensor '" + name + "' shape mismatch", 0);
    it->second.copy_(source);
    ++restored;
  }
  if (restored != targets.size()) {
    throw ParseError("checkpoint is missing " + std::to_string(targets.size() - restored) + " tensors", 0);
  }
  out.id = sha256_hex(bytes.data(), bytes.size());
  out.net->eval();
  return out;
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
  return deserialize_checkpoint(bytes);
}

}  // namespace gmn
