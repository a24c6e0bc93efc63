// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "stdetr/ablation.hpp"
#include "stdetr/checkpoint.hpp"
#include "stdetr/error.hpp"
#include "stdetr/evalkit.hpp"
#include "stdetr/runconfig.hpp"
#include "stdetr/synthdata.hpp"
#include "stdetr/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace stdetr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUser = 1;
constexpr int kExitInternal = 2;

// Shared by every verb: an optional config file plus --key=value overrides
// collected from the unparsed arguments.
struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

void apply_overrides(json& flat, const std::vector<std::string>& args) {
  for (const std::string& arg : args) {
    if (arg.rfind("--", 0) != 0 || arg.find('=') == std::string::npos)
      fail(Errc::kConfig, "unexpected argument '" + arg + "' (overrides are --key=value)");
    const std::size_t eq = arg.find('=');
    apply_override(flat, arg.substr(2, eq - 2), arg.substr(eq + 1));
  }
}

RunConfig resolve_config(const ConfigArgs& a, std::optional<json> base = std::nullopt) {
  json flat = base ? *base : to_json(RunConfig{});
  if (!a.config_path.empty()) {
    std::ifstream f(a.config_path);
    if (!f) fail(Errc::kConfig, "cannot open config " + a.config_path);
    json file;
    try {
      f >> file;
    } catch (const json::exception& e) {
      fail(Errc::kConfig, "config " + a.config_path + " is not valid JSON: " + e.what());
    }
    if (!file.is_object()) fail(Errc::kConfig, "config must be a flat JSON object");
    for (auto& [k, v] : file.items()) {
      if (!flat.contains(k)) fail(Errc::kConfig, "unknown config key '" + k + "'");
      flat[k] = v;
    }
  }
  apply_overrides(flat, a.overrides);
  return run_config_from_json(flat);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(Errc::kIo, "cannot write " + path.string());
  f << text;
  if (!f) fail(Errc::kIo, "write failed for " + path.string());
}

Dataset train_dataset(const RunConfig& c) {
  return c.train_data.empty() ? generate_dataset(c.data) : read_dataset(c.train_data);
}

Dataset eval_dataset(const RunConfig& c) {
  return c.eval_data.empty() ? generate_dataset(c.eval_spec()) : read_dataset(c.eval_data);
}

fs::path default_checkpoint(const RunConfig& c) { return fs::path(c.output_dir) / "checkpoint.stck"; }

// Loads a checkpoint and rebuilds its model; overrides may change anything
// but the model keys (changing those is a CheckpointMismatch).
struct Restored {
  RunConfig config;
  Checkpoint ckpt;
  StDetr model;
};

Restored restore_from(const std::string& path, const ConfigArgs& a) {
  Checkpoint ckpt = load_checkpoint(path);
  RunConfig cfg = resolve_config(a, to_json(ckpt.config));
  StDetr model(cfg.model, cfg.train.seed);
  restore(model, ckpt);
  return {cfg, std::move(ckpt), std::move(model)};
}

json detections_json(const std::vector<DetectionSet>& sets) {
  json steps = json::array();
  for (const DetectionSet& s : sets) {
    json slots = json::array();
    for (std::size_t i = 0; i < s.slots(); ++i) {
      const Box b = s.box(i);
      slots.push_back({{"slot", i},
                       {"box", {b.cx, b.cy, b.w, b.h}},
                       {"logits", {s.logits(i, 0), s.logits(i, 1)}}});
    }
    json kept = json::array();
    for (const ScoredBox& d : score_detections(s))
      kept.push_back({{"box", {d.box.cx, d.box.cy, d.box.w, d.box.h}}, {"score", d.score}});
    steps.push_back({{"slots", slots}, {"detections", kept}});
  }
  return steps;
}

int cmd_gen_data(const ConfigArgs& a, const std::string& split, const std::string& out) {
  const RunConfig c = resolve_config(a);
  if (split != "train" && split != "eval") fail(Errc::kConfig, "split must be train or eval");
  const Dataset data = generate_dataset(split == "train" ? c.data : c.eval_spec());
  const fs::path path = fs::path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_dataset(data, path);
  std::cout << json{{"written", path.string()}, {"sequences", data.sequences.size()}}.dump() << "\n";
  return kExitOk;
}

int cmd_train(const ConfigArgs& a, std::size_t checkpoint_every, bool quiet) {
  const RunConfig c = resolve_config(a);
  const fs::path dir(c.output_dir);
  fs::create_directories(dir);
  write_text(dir / "config.json", to_json(c).dump(2) + "\n");
  const Dataset data = train_dataset(c);
  StDetr model(c.model, c.train.seed);
  std::ofstream log(dir / "loss.jsonl", std::ios::binary);
  if (!log) fail(Errc::kIo, "cannot write " + (dir / "loss.jsonl").string());
  std::size_t last_step = 0;
  train(model, data, c.train, [&](const StepLog& s) {
    log << s.to_json().dump() << "\n";
    last_step = s.step;
    if (!quiet && s.step % 50 == 0)
      std::cerr << "step " << s.step << " epoch " << s.epoch << " loss " << s.loss.total << "\n";
    if (checkpoint_every && s.step % checkpoint_every == 0)
      save_checkpoint(dir / ("checkpoint_step" + std::to_string(s.step) + ".stck"), c, s.step,
                      model.params());
  });
  save_checkpoint(default_checkpoint(c), c, last_step, model.params());
  std::cout << json{{"checkpoint", default_checkpoint(c).string()}, {"steps", last_step}}.dump()
            << "\n";
  return kExitOk;
}

int cmd_eval(const ConfigArgs& a, const std::string& checkpoint, const std::string& out) {
  Restored r = restore_from(checkpoint, a);
  const Dataset data = eval_dataset(r.config);
  const EvalReport report = evaluate_model(r.model, data);
  const std::string text = report.to_json().dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    write_text(out, text);
  }
  return kExitOk;
}

int cmd_infer(const ConfigArgs& a, const std::string& checkpoint, const std::string& split,
              std::size_t index, const std::string& out, const std::string& attention_dir) {
  Restored r = restore_from(checkpoint, a);
  if (split != "train" && split != "eval") fail(Errc::kConfig, "split must be train or eval");
  const Dataset data = split == "train" ? train_dataset(r.config) : eval_dataset(r.config);
  if (index >= data.sequences.size())
    fail(Errc::kInvalidArgument, "sequence index " + std::to_string(index) + " out of range");
  const FrameSequence& seq = data.sequences[index];
  const ModelConfig& m = r.config.model;

  Tape tape;
  const ModelOutput output = r.model.forward(tape, model_inputs(seq, m));
  json result{{"sequence", index},
              {"split", split},
              {"steps", detections_json(r.model.detections(output))}};
  json labels = json::array();
  for (const auto& step : model_targets(seq, m)) {
    json gts = json::array();
    for (const GroundTruth& g : step) gts.push_back({g.box.cx, g.box.cy, g.box.w, g.box.h});
    labels.push_back(gts);
  }
  result["ground_truth"] = labels;

  if (!attention_dir.empty()) {
    json files = json::array();
    auto add = [&](const std::vector<fs::path>& paths) {
      for (const auto& p : paths) files.push_back(p.string());
    };
    const AttentionLayout spatial{m.grid_height(), m.grid_width()};
    if (m.aggregation == Aggregation::kEarly) {
      add(dump_attention(output.trace.decoder_attention, spatial, attention_dir, "decoder"));
    } else {
      add(dump_attention(output.trace.decoder_attention, {m.steps, m.queries}, attention_dir,
                         "temporal"));
      for (std::size_t t = 0; t < output.trace.spatial_attention.size(); ++t)
        add(dump_attention(output.trace.spatial_attention[t], spatial, attention_dir,
                           "spatial_t" + std::to_string(t)));
    }
    result["attention"] = files;
  }
  const std::string text = result.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    write_text(out, text);
  }
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, double tolerance, std::size_t max_entries) {
  struct Case {
    const char* name;
    ModelConfig cfg;
  };
  const Case cases[] = {{"early", grad_check_config(Aggregation::kEarly)},
                        {"late", grad_check_config(Aggregation::kLate)},
                        {"seq2seq", grad_check_config(Aggregation::kLate, true)}};
  bool ok = true;
  json results = json::array();
  for (const Case& c : cases) {
    GradCheckStats stats;
    const double err = model_grad_check(c.cfg, seed, 1e-3, max_entries, &stats);
    const bool pass = err < tolerance;
    ok = ok && pass;
    results.push_back({{"variant", c.name},
                       {"max_rel_error", err},
                       {"checked", stats.checked},
                       {"skipped_at_kinks", stats.skipped},
                       {"pass", pass}});
  }
  std::cout << json{{"tolerance", tolerance}, {"results", results}, {"pass", ok}}.dump(2) << "\n";
  return ok ? kExitOk : kExitInternal;
}

int cmd_ablate(const ConfigArgs& a, std::size_t seeds, bool full, const std::string& out) {
  const RunConfig c = resolve_config(a);
  const AblationPlan plan = full ? full_grid_plan(c.model) : standard_plan(c.model);
  const Dataset train_set = train_dataset(c);
  const Dataset eval_set = eval_dataset(c);
  const AblationReport report =
      run_ablation(plan, c, train_set, eval_set, seeds,
                   [](const std::string& msg) { std::cerr << msg << "\n"; });
  const fs::path dir = out.empty() ? fs::path(c.output_dir) : fs::path(out);
  json j = report.to_json();
  j["config"] = to_json(c);
  j["seeds"] = seeds;
  write_text(dir / "ablation.json", j.dump(2) + "\n");
  write_text(dir / "ablation.md", report.to_markdown());
  std::cout << report.to_markdown();
  return kExitOk;
}

int report_error(int code, std::string_view kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << "\n";
  return code;
}

bool is_internal(Errc code) {
  switch (code) {
    case Errc::kNonFinite:
    case Errc::kNonDeterministicFunction:
    case Errc::kInvalidAssignment:
    case Errc::kShapeMismatch:
    case Errc::kNotScalar:
      return true;
    default:
      return false;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal detection transformer: data, training, evaluation, ablations"};
  app.require_subcommand(1);
  ConfigArgs cfg;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", cfg.config_path, "flat JSON run config");
    sub->allow_extras();
    sub->footer("Any config key can be overridden with --key=value.");
  };

  std::string split = "train", out, checkpoint, attention_dir;
  std::size_t index = 0, checkpoint_every = 0, seeds = 3, max_entries = 0;
  std::uint64_t gc_seed = 1;
  double tolerance = 1e-4;
  bool quiet = false, full = false;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic STDS1 dataset");
  add_common(gen);
  gen->add_option("--split", split, "train or eval")->capture_default_str();
  gen->add_option("-o,--out", out, "output .stds file")->required();

  auto* tr = app.add_subcommand("train", "train a model; writes checkpoints and loss.jsonl");
  add_common(tr);
  tr->add_option("--checkpoint-every", checkpoint_every, "also save every N steps (0: final only)");
  tr->add_flag("-q,--quiet", quiet, "no progress on stderr");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint; writes an EvalReport JSON");
  add_common(ev);
  ev->add_option("--checkpoint", checkpoint, "STCK1 file")->required();
  ev->add_option("-o,--out", out, "report path (default: stdout)");

  auto* inf = app.add_subcommand("infer", "run one sequence; writes detections JSON");
  add_common(inf);
  inf->add_option("--checkpoint", checkpoint, "STCK1 file")->required();
  inf->add_option("--split", split, "train or eval")->capture_default_str();
  inf->add_option("--index", index, "sequence index")->capture_default_str();
  inf->add_option("-o,--out", out, "detections path (default: stdout)");
  inf->add_option("--attention-dir", attention_dir, "dump decoder attention maps as PGM");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the full model");
  gc->add_option("--seed", gc_seed)->capture_default_str();
  gc->add_option("--tolerance", tolerance)->capture_default_str();
  gc->add_option("--max-entries", max_entries, "coordinates probed per parameter (0: all)")
      ->capture_default_str();

  auto* ab = app.add_subcommand("ablate", "train and evaluate the ablation matrix");
  add_common(ab);
  ab->add_option("--seeds", seeds, "training seeds per cell")->capture_default_str();
  ab->add_flag("--full", full, "full input x aggregation x tpe x T grid");
  ab->add_option("-o,--out", out, "output directory (default: output_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(kExitUser, "usage", e.what());
  }

  try {
    for (CLI::App* sub : app.get_subcommands()) cfg.overrides = sub->remaining();
    if (gen->parsed()) return cmd_gen_data(cfg, split, out);
    if (tr->parsed()) return cmd_train(cfg, checkpoint_every, quiet);
    if (ev->parsed()) return cmd_eval(cfg, checkpoint, out);
    if (inf->parsed()) {
      if (split == "train" && !inf->count("--split")) split = "eval";
      return cmd_infer(cfg, checkpoint, split, index, out, attention_dir);
    }
    if (gc->parsed()) return cmd_gradcheck(gc_seed, tolerance, max_entries);
    if (ab->parsed()) return cmd_ablate(cfg, seeds, full, out);
  } catch (const Error& e) {
    return report_error(is_internal(e.code()) ? kExitInternal : kExitUser, errc_name(e.code()),
                        e.what());
  } catch (const fs::filesystem_error& e) {
    return report_error(kExitUser, "Io", e.what());
  } catch (const std::exception& e) {
    return report_error(kExitInternal, "Internal", e.what());
  }
  return kExitInternal;
}
