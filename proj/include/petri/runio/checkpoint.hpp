#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "petri/metaevo/runner.hpp"

namespace petri {

class CheckpointError : public Error {
 public:
  using Error::Error;
};

struct Checkpoint {
  RunConfig config;
  Population population;
  std::uint64_t metrics_cursor = 0;  // byte length of metrics.jsonl at save time
  std::uint64_t summary_cursor = 0;  // byte length of summary.jsonl at save time
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: "PETRICKP", u32 version, u32 section count, then sections of
// [4-byte tag][u64 length][payload][u32 crc32 of payload]. Tags: CONF (JSON),
// META, RNG (meta stream), ARCH, one WRLD per world. Integers and float32
// tensor data are little-endian.
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint);
/// Validates every section before building anything.
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Writes through a temporary file and rename.
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace petri
