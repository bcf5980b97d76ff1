#include "stseq/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "stseq/error.hpp"

namespace stseq {

namespace {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return v;
}

}  // namespace

const CheckpointTensor& Checkpoint::find(const std::string& name) const {
  auto it = std::find_if(tensors.begin(), tensors.end(),
                         [&](const auto& t) { return t.name == name; });
  if (it == tensors.end()) throw IoError("checkpoint: missing tensor '" + name + "'");
  return *it;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    if (shape_numel(t.shape) != t.values.size()) {
      throw DimensionError("checkpoint: tensor '" + t.name + "' shape " +
                           shape_to_string(t.shape) + " vs " +
                           std::to_string(t.values.size()) + " values");
    }
    const std::uint64_t bytes = t.values.size() * 4;
    manifest.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset},
                        {"bytes", bytes}});
    offset += bytes;
  }
  const nlohmann::json header{{"format_version", kCheckpointFormatVersion},
                              {"config", ckpt.config},
                              {"tensors", manifest},
                              {"payload_bytes", offset}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const auto& t : ckpt.tensors) {
    for (float v : t.values) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(bits >> (8 * i)));
    }
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw IoError("checkpoint: bad magic");
  }
  const std::uint64_t hlen = get_u64(bytes.data() + 8);
  if (hlen > bytes.size() - 16) throw IoError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + std::ptrdiff_t(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: malformed header: ") + e.what());
  }
  if (header.value("format_version", 0) != kCheckpointFormatVersion) {
    throw IoError("checkpoint: unsupported format version");
  }
  const std::size_t base = 16 + hlen;
  const std::uint64_t payload = header.at("payload_bytes").get<std::uint64_t>();
  if (bytes.size() - base != payload) throw IoError("checkpoint: payload size mismatch");

  Checkpoint ckpt;
  ckpt.config = header.at("config");
  for (const auto& entry : header.at("tensors")) {
    CheckpointTensor t;
    t.name = entry.at("name").get<std::string>();
    t.shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto nbytes = entry.at("bytes").get<std::uint64_t>();
    if (nbytes != shape_numel(t.shape) * 4 || offset + nbytes > payload) {
      throw IoError("checkpoint: inconsistent manifest entry '" + t.name + "'");
    }
    t.values.resize(nbytes / 4);
    const std::uint8_t* p = bytes.data() + base + offset;
    for (std::size_t i = 0; i < t.values.size(); ++i, p += 4) {
      const std::uint32_t bits = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
                                 std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
      t.values[i] = std::bit_cast<float>(bits);
    }
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("short write on checkpoint '" + path.string() + "'");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace stseq
