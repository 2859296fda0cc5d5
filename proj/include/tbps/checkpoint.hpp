#pragma once

#include <cstdint>
#include <filesystem>

#include "tbps/model.hpp"

// Single-file checkpoint: a text manifest
//
//   TBPS-CHECKPOINT 1
//   blocks <count>
//   <name> <ndim> <dims...>     (one line per block)
//
// followed by the blocks as consecutive RTF1 tensors in manifest order. Each
// parameter contributes its values plus "<name>#adam_m", "<name>#adam_v" and
// "<name>#step"; "trainer#epoch" and "trainer#step" record progress.
namespace tbps::checkpoint {

struct TrainState {
  std::int64_t epoch = 0;  // completed epochs
  std::int64_t step = 0;   // completed optimizer steps
};

template <typename Real>
void save(const std::filesystem::path& path, Model<Real>& model, const TrainState& state);

// Throws ConfigError when the checkpoint's parameter names or shapes disagree
// with the model (e.g. a different K or d), DataError on malformed files.
template <typename Real>
TrainState load(const std::filesystem::path& path, Model<Real>& model);

}  // namespace tbps::checkpoint
