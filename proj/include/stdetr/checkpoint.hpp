// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "stdetr/runconfig.hpp"

namespace stdetr {

inline constexpr std::string_view kCheckpointMagic = "STCK1";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  std::size_t step = 0;
  ParameterStore params;
};

/// STCK1 container: 5-byte magic, u64 little-endian manifest length, JSON
/// manifest (config, step, dtype, parameter names/shapes/offsets), then the
/// parameter blobs as little-endian float64 (or float32 when
/// config.float64 is false).
std::string serialize_checkpoint(const RunConfig& config, std::size_t step,
                                 const ParameterStore& params);
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const RunConfig& config, std::size_t step,
                     const ParameterStore& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint parameters into `model`. The model configuration and
/// every parameter name and shape must match, else CheckpointMismatch.
void restore(StDetr& model, const Checkpoint& ckpt);

}  // namespace stdetr
