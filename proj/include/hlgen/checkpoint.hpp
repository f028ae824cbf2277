#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "hlgen/model.hpp"

namespace hlgen {

struct Checkpoint {
  Hyperparams hp;
  Parameters<float> params;
  Parameters<float> accumulators;  // optimizer state, same shapes as params
  int64_t step = 0;
  double best_validation_loss = 0.0;  // NaN when never validated
  uint64_t vocab_fingerprint = 0;
};

// Binary container: magic, JSON header (hyperparameters, fingerprint,
// group names and shapes), raw little-endian float32 groups in column-major
// order, trailing FNV-1a checksum. Written to a temp file and renamed.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

// Rejects truncated or corrupt files, and a fingerprint that differs from
// expected_fingerprint when one is given.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<uint64_t> expected_fingerprint = std::nullopt);

}  // namespace hlgen
