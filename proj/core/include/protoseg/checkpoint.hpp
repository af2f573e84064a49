#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "protoseg/encoder.hpp"

namespace protoseg {

/// Trained model state.
///
/// On disk: the 8-byte magic "PSEGCKPT", a little-endian u32 format version, a u64
/// length and a JSON header (kind, encoder config, iteration, best validation DC, RNG
/// state, free-form metadata), then a u32 tensor count and for each tensor its name,
/// shape and float64 values, all little-endian.
struct Checkpoint {
  /// "fewshot" or "supervised".
  std::string kind = "fewshot";
  Parameters params;
  std::int64_t iteration = 0;
  /// Negative when no validation was run.
  double best_val_dc = -1.0;
  /// Serialised std::mt19937_64 state of the training loop.
  std::string rng_state;
  /// JSON object with settings needed at inference time (e.g. cosine scale).
  std::string meta = "{}";
};

constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Throws ErrorCode::kConfigMismatch when the stored encoder architecture differs from
/// `expected` (the initialisation seed is not compared).
Checkpoint load_checkpoint(const std::filesystem::path& path, const EncoderConfig& expected);

}  // namespace protoseg
