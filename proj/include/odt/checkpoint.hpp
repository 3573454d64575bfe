#pragma once

#include <cstdint>
#include <string>

#include "odt/nn.hpp"

namespace odt {

enum class TrainPhase : std::uint32_t { kDetect = 0, kJoint = 1 };

struct CheckpointMeta {
  TrainPhase phase = TrainPhase::kDetect;
  std::uint32_t epoch = 0;
  std::uint64_t arch_fingerprint = 0;
  bool has_optimizer = false;
};

// Self-describing binary checkpoint: named parameter tensors plus optional
// AdamW state. Loading verifies every name and shape against the store.
void save_checkpoint(const std::string& path, const ParamStore& params, const AdamW* opt,
                     const CheckpointMeta& meta);

CheckpointMeta peek_checkpoint(const std::string& path);

// allow_mismatch lets a checkpoint with a foreign arch fingerprint load
// anyway (shapes are still enforced); otherwise a mismatch throws.
CheckpointMeta load_checkpoint(const std::string& path, ParamStore& params, AdamW* opt,
                               std::uint64_t expected_fingerprint, bool allow_mismatch);

}  // namespace odt
