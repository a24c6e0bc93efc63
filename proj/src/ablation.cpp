// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "stdetr/ablation.hpp"

#include <algorithm>
#include <chrono>
#include <exception>
#include <map>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "stdetr/error.hpp"

namespace stdetr {

namespace {

std::string cell_name(const ModelConfig& m) {
  std::string n = std::string(to_string(m.aggregation)) + "_T" + std::to_string(m.steps);
  n += m.tpe ? "_tpe" : "_notpe";
  n += "_" + std::string(to_string(m.input_mode));
  if (m.seq2seq) n += "_seq2seq";
  return n;
}

ModelConfig variant(ModelConfig m, Aggregation agg, std::size_t steps, bool tpe, InputMode mode) {
  m.aggregation = agg;
  m.steps = steps;
  m.tpe = tpe;
  m.input_mode = mode;
  m.seq2seq = false;
  return m;
}

struct PlanBuilder {
  AblationPlan plan;
  std::map<std::string, std::size_t> index;

  std::string add(const ModelConfig& m) {
    const std::string name = cell_name(m);
    if (!index.count(name)) {
      index[name] = plan.cells.size();
      plan.cells.push_back({name, m});
    }
    return name;
  }
};

}  // namespace

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

AblationPlan standard_plan(const ModelConfig& base) {
  using A = Aggregation;
  using I = InputMode;
  PlanBuilder b;
  // The 1-step baseline is the early path at T = 1, where TPE is a constant
  // offset; it is kept on so T = 1 matches the TPE rows of the other tables.
  const std::string baseline = b.add(variant(base, A::kEarly, 1, true, I::kRgbOf));
  AblationTable motion{"Effect of the motion features (1-step)", {}};
  motion.rows.emplace_back("RGB-only", b.add(variant(base, A::kEarly, 1, true, I::kRgb)));
  motion.rows.emplace_back("RGB+RGB", b.add(variant(base, A::kEarly, 1, true, I::kRgbRgb)));
  motion.rows.emplace_back("RGB+OF", baseline);

  const std::string early2 = b.add(variant(base, A::kEarly, 2, true, I::kRgbOf));
  AblationTable arch{"Early vs late temporal aggregation (T=2)", {}};
  arch.rows.emplace_back("1-Step", baseline);
  arch.rows.emplace_back("Early", early2);
  arch.rows.emplace_back("Late", b.add(variant(base, A::kLate, 2, true, I::kRgbOf)));

  AblationTable tpe{"Effect of TPE (early, T=2)", {}};
  tpe.rows.emplace_back("Early", b.add(variant(base, A::kEarly, 2, false, I::kRgbOf)));
  tpe.rows.emplace_back("Early+TPE", early2);

  AblationTable window{"Effect of the temporal window size T (early+TPE)", {}};
  window.rows.emplace_back("1-Step", baseline);
  window.rows.emplace_back("2-Steps", early2);
  window.rows.emplace_back("4-Steps", b.add(variant(base, A::kEarly, 4, true, I::kRgbOf)));

  b.plan.tables = {motion, arch, tpe, window};
  return b.plan;
}

AblationPlan full_grid_plan(const ModelConfig& base) {
  PlanBuilder b;
  AblationTable all{"Full grid", {}};
  for (InputMode mode : {InputMode::kRgb, InputMode::kRgbRgb, InputMode::kRgbOf})
    for (Aggregation agg : {Aggregation::kEarly, Aggregation::kLate})
      for (bool tpe : {false, true})
        for (std::size_t steps : {1, 2, 4}) {
          const std::string name = b.add(variant(base, agg, steps, tpe, mode));
          all.rows.emplace_back(name, name);
        }
  b.plan.tables = {all};
  return b.plan;
}

const CellResult& AblationReport::cell(const std::string& name) const {
  for (const auto& c : cells)
    if (c.name == name) return c;
  fail(Errc::kInvalidArgument, "no ablation cell named " + name);
}

AblationReport run_ablation(const AblationPlan& plan, const RunConfig& base,
                            const Dataset& train_set, const Dataset& eval_set, std::size_t seeds,
                            const std::function<void(const std::string&)>& progress) {
  if (seeds == 0) fail(Errc::kInvalidArgument, "need at least one seed per cell");
  struct Job {
    std::size_t cell, seed_index;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < plan.cells.size(); ++c)
    for (std::size_t k = 0; k < seeds; ++k) jobs.push_back({c, k});

  std::vector<EvalReport> reports(jobs.size());
  std::vector<double> seconds(jobs.size(), 0.0);
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(jobs.size()); ++j) {
    try {
      const Job& job = jobs[static_cast<std::size_t>(j)];
      const AblationCell& cell = plan.cells[job.cell];
      TrainOptions opts = base.train;
      opts.seed = base.train.seed + job.seed_index;
      const auto t0 = std::chrono::steady_clock::now();
      StDetr model(cell.model, opts.seed);
      train(model, train_set, opts);
      reports[j] = evaluate_model(model, eval_set);
      seconds[j] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (progress) {
        std::ostringstream msg;
        msg << cell.name << " seed " << opts.seed << ": AP50 " << reports[j].ap50 << " mAP "
            << reports[j].map_total << " (" << seconds[j] << " s)";
#pragma omp critical(stdetr_ablation_progress)
        progress(msg.str());
      }
    } catch (...) {
#pragma omp critical(stdetr_ablation_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  AblationReport out;
  out.plan = plan;
  for (std::size_t c = 0; c < plan.cells.size(); ++c) {
    CellResult r;
    r.name = plan.cells[c].name;
    r.model = plan.cells[c].model;
    std::vector<double> map, ap50, ap75;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      if (jobs[j].cell != c) continue;
      r.seeds.push_back(base.train.seed + jobs[j].seed_index);
      r.reports.push_back(reports[j]);
      r.seconds += seconds[j];
      map.push_back(reports[j].map_total);
      ap50.push_back(reports[j].ap50);
      ap75.push_back(reports[j].ap75);
    }
    r.map_total = median(map);
    r.ap50 = median(ap50);
    r.ap75 = median(ap75);
    out.cells.push_back(std::move(r));
  }
  return out;
}

nlohmann::json AblationReport::to_json() const {
  nlohmann::json cells_json = nlohmann::json::array();
  for (const auto& c : cells) {
    nlohmann::json runs = nlohmann::json::array();
    for (std::size_t k = 0; k < c.reports.size(); ++k)
      runs.push_back({{"seed", c.seeds[k]}, {"report", c.reports[k].to_json()}});
    cells_json.push_back({{"name", c.name},
                          {"config", model_config_json(c.model)},
                          {"mAP_Total", c.map_total},
                          {"AP_50", c.ap50},
                          {"AP_75", c.ap75},
                          {"runs", runs}});
  }
  nlohmann::json tables_json = nlohmann::json::array();
  for (const auto& t : plan.tables) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& [label, name] : t.rows) {
      const CellResult& c = cell(name);
      rows.push_back({{"method", label},
                      {"cell", name},
                      {"mAP_Total", c.map_total},
                      {"AP_50", c.ap50},
                      {"AP_75", c.ap75}});
    }
    tables_json.push_back({{"title", t.title},
                           {"columns", {"mAP_Total", "AP_50", "AP_75"}},
                           {"rows", rows}});
  }
  return {{"cells", cells_json}, {"tables", tables_json}};
}

std::string AblationReport::to_markdown() const {
  std::ostringstream md;
  md.setf(std::ios::fixed);
  md.precision(1);
  for (const auto& t : plan.tables) {
    md << "### " << t.title << "\n\n";
    md << "| Method | mAP_Total | AP_50 | AP_75 |\n|---|---|---|---|\n";
    for (const auto& [label, name] : t.rows) {
      const CellResult& c = cell(name);
      md << "| " << label << " | " << 100 * c.map_total << "% | " << 100 * c.ap50 << "% | "
         << 100 * c.ap75 << "% |\n";
    }
    md << "\n";
  }
  return md.str();
}

}  // namespace stdetr
