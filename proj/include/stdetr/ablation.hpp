// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stdetr/evalkit.hpp"
#include "stdetr/model.hpp"
#include "stdetr/runconfig.hpp"
#include "stdetr/training.hpp"

namespace stdetr {

/// One trained-and-evaluated configuration of the experiment grid.
struct AblationCell {
  std::string name;  // unique key, e.g. "early_T2_tpe_rgb_of"
  ModelConfig model;
};

/// Which tables a cell appears in, keyed by table title.
struct AblationTable {
  std::string title;
  std::vector<std::pair<std::string, std::string>> rows;  // (row label, cell name)
};

struct AblationPlan {
  std::vector<AblationCell> cells;
  std::vector<AblationTable> tables;
};

/// The four experiment tables: motion features, early vs late vs 1-step,
/// TPE on/off, and window size T in {1, 2, 4}. Cells shared between tables
/// are trained once.
AblationPlan standard_plan(const ModelConfig& base);
/// Full {input_mode} x {early, late} x {tpe on, off} x {T = 1, 2, 4} grid.
AblationPlan full_grid_plan(const ModelConfig& base);

struct CellResult {
  std::string name;
  ModelConfig model;
  std::vector<std::uint64_t> seeds;
  std::vector<EvalReport> reports;  // one per seed
  double map_total = 0, ap50 = 0, ap75 = 0;  // medians over seeds
  double seconds = 0;                        // wall time, summed over seeds
};

struct AblationReport {
  AblationPlan plan;
  std::vector<CellResult> cells;

  const CellResult& cell(const std::string& name) const;
  nlohmann::json to_json() const;
  std::string to_markdown() const;
};

/// Trains every cell for each seed (base.train.seed + k, k < seeds) on
/// `train_set`, evaluates on `eval_set`, and reports seed medians. Runs are
/// independent and may execute concurrently; each run is single-threaded
/// and fully determined by its config and seed.
AblationReport run_ablation(const AblationPlan& plan, const RunConfig& base,
                            const Dataset& train_set, const Dataset& eval_set, std::size_t seeds,
                            const std::function<void(const std::string&)>& progress = {});

double median(std::vector<double> values);

}  // namespace stdetr
