// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "stdetr/model.hpp"
#include "stdetr/training.hpp"

namespace stdetr {

/// Everything a run depends on. Serialized as one flat JSON object so any
/// key can be overridden from the command line with --key=value.
struct RunConfig {
  ModelConfig model;
  DatasetSpec data;             // training split
  std::size_t eval_sequences = 50;
  std::uint64_t eval_seed = 1001;
  TrainOptions train;
  std::string train_data;       // STDS1 path; empty -> generate from `data`
  std::string eval_data;        // STDS1 path; empty -> generate the eval split
  std::string output_dir = "runs/default";
  bool float64 = true;          // checkpoint precision

  /// Eval split: same generator settings, its own seed and size.
  DatasetSpec eval_spec() const;
  bool operator==(const RunConfig&) const = default;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Missing keys keep their defaults; unknown keys are a ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
/// Just the model keys, for checkpoint compatibility checks.
nlohmann::json model_config_json(const ModelConfig& cfg);

/// Applies `value` (command-line text) to `key`, parsed according to the
/// type the key already has in `flat`.
void apply_override(nlohmann::json& flat, std::string_view key, std::string_view value);

RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace stdetr
