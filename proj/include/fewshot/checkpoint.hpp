#pragma once

#include <string>

#include "fewshot/trainer.hpp"

namespace fewshot {

// Versioned text checkpoint: header fields, then named tensors in
// declaration order, one row per line at 17 significant digits (decimal
// round-trips doubles exactly). Covers the learnable tensors, the
// estimator's running BN statistics, and the epoch counters.
void save_checkpoint(const TrainState& st, const std::string& path);
TrainState load_checkpoint(const std::string& path);

}  // namespace fewshot
