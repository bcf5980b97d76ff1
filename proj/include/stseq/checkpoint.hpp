#pragma once

// Checkpoint container:
//
//   bytes 0..7    magic "STSEQCK1"
//   bytes 8..15   header length H, unsigned 64-bit little-endian
//   next H bytes  UTF-8 JSON header:
//                   {"format_version": 1,
//                    "config": {...},
//                    "tensors": [{"name", "shape", "offset", "bytes"}, ...],
//                    "payload_bytes": N}
//   next N bytes  payload: IEEE-754 binary32 values, little-endian, each
//                 tensor at its byte offset from the start of the payload.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stseq/numerics.hpp"

namespace stseq {

inline constexpr char kCheckpointMagic[8] = {'S', 'T', 'S', 'E', 'Q', 'C', 'K', '1'};
inline constexpr int kCheckpointFormatVersion = 1;

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  nlohmann::json config;
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor& find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace stseq
