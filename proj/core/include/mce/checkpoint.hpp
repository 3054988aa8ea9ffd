#pragma once

#include <cstdint>
#include <string>

#include "mce/model.hpp"

namespace mce {

/// Checkpoint file layout (all integers little-endian):
///   magic "MCEC" | u32 version | u64 config-fingerprint | u64 seed |
///   parameter records... | u32 CRC-32 of all preceding bytes
/// Each record: u32 name length | name bytes | u8 dtype (0 = f64, 1 = f32) |
///   u32 rank | u64 extents... | payload.
/// Records run until the trailing CRC; load failures are distinct errors for
/// bad version, truncation, and checksum mismatch.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
  std::uint32_t version = 0;
  std::uint64_t config_fingerprint = 0;
  std::uint64_t seed = 0;
};

void save_checkpoint(const Model& model, const std::string& path,
                     std::uint64_t config_fingerprint, std::uint64_t seed);

/// Restores every trainable parameter; names and shapes must match the
/// model's registry exactly.
CheckpointInfo load_checkpoint(Model& model, const std::string& path);

/// Header-only read (validates magic/version/CRC, skips payload restore).
CheckpointInfo read_checkpoint_info(const std::string& path);

/// CRC-32 (IEEE), exposed for fault-injection tests.
std::uint32_t crc32(const unsigned char* data, std::size_t n);

}  // namespace mce
