// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <set>
#include <string>

#include <doctest.h>

#include "stdetr/ablation.hpp"
#include "stdetr/checkpoint.hpp"
#include "stdetr/error.hpp"
#include "stdetr/runconfig.hpp"
#include "stdetr/training.hpp"

using namespace stdetr;

namespace {

template <class F>
void expect_code(Errc code, F&& f) {
  try {
    f();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == code);
  }
}

RunConfig tiny_run() {
  RunConfig c;
  c.model = grad_check_config(Aggregation::kEarly);
  c.data.height = c.model.image_height;
  c.data.width = c.model.image_width;
  c.data.num_sequences = 6;
  c.data.moving = {1, 2};
  c.data.statics = {0, 1};
  c.data.size = {5, 9};
  c.eval_sequences = 4;
  c.train.epochs = 1;
  c.train.batch = 2;
  return c;
}

}  // namespace

TEST_CASE("run config JSON round-trip and overrides") {
  RunConfig c = tiny_run();
  c.model.aggregation = Aggregation::kLate;
  c.model.input_mode = InputMode::kRgbRgb;
  c.train.augment = true;
  c.float64 = false;
  const nlohmann::json j = to_json(c);
  CHECK(run_config_from_json(j) == c);

  nlohmann::json flat = j;
  apply_override(flat, "T", "4");
  apply_override(flat, "lr", "0.0005");
  apply_override(flat, "tpe", "false");
  apply_override(flat, "aggregation", "early");
  const RunConfig o = run_config_from_json(flat);
  CHECK(o.model.steps == 4);
  CHECK(o.train.lr == 0.0005);
  CHECK_FALSE(o.model.tpe);
  CHECK(o.model.aggregation == Aggregation::kEarly);

  expect_code(Errc::kConfig, [&] { apply_override(flat, "no_such_key", "1"); });
  expect_code(Errc::kConfig, [&] { apply_override(flat, "T", "two"); });
  nlohmann::json unknown = j;
  unknown["mystery"] = 1;
  expect_code(Errc::kConfig, [&] { run_config_from_json(unknown); });
  // Missing keys keep their defaults.
  CHECK(run_config_from_json(nlohmann::json::object()) == RunConfig{});
}

TEST_CASE("checkpoints round-trip bitwise in both precisions") {
  RunConfig c = tiny_run();
  StDetr model(c.model, 3);
  const std::string bytes = serialize_checkpoint(c, 17, model.params());
  const Checkpoint back = deserialize_checkpoint(bytes);
  CHECK(back.step == 17);
  CHECK(back.config == c);
  StDetr restored(c.model, 99);
  restore(restored, back);
  auto it = restored.params().begin();
  for (const Parameter& p : model.params()) {
    CHECK(p.name == it->name);
    CHECK(p.value == it->value);
    ++it;
  }
  CHECK(serialize_checkpoint(c, 17, restored.params()) == bytes);

  c.float64 = false;
  const std::string narrow = serialize_checkpoint(c, 1, model.params());
  CHECK(narrow.size() < bytes.size());
  StDetr from_narrow(c.model, 99);
  restore(from_narrow, deserialize_checkpoint(narrow));
  CHECK(serialize_checkpoint(c, 1, from_narrow.params()) == narrow);

  const auto path = std::filesystem::temp_directory_path() / "stdetr_test.stck";
  save_checkpoint(path, tiny_run(), 17, model.params());
  CHECK(serialize_checkpoint(load_checkpoint(path).config, 17, load_checkpoint(path).params) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint errors") {
  const RunConfig c = tiny_run();
  StDetr model(c.model, 3);
  const std::string bytes = serialize_checkpoint(c, 0, model.params());
  std::string bad = bytes;
  bad[1] = 'Z';
  expect_code(Errc::kBadMagic, [&] { deserialize_checkpoint(bad); });
  expect_code(Errc::kTruncatedFile, [&] { deserialize_checkpoint(bytes.substr(0, bytes.size() - 8)); });
  ModelConfig other = c.model;
  other.queries = 4;
  StDetr mismatched(other, 3);
  expect_code(Errc::kCheckpointMismatch, [&] { restore(mismatched, deserialize_checkpoint(bytes)); });
}

TEST_CASE("zero epochs leave the initialization untouched; training is reproducible") {
  RunConfig c = tiny_run();
  const Dataset data = generate_dataset(c.data);
  StDetr init(c.model, c.train.seed);
  StDetr trained(c.model, c.train.seed);
  TrainOptions none = c.train;
  none.epochs = 0;
  train(trained, data, none);
  CHECK(serialize_checkpoint(c, 0, trained.params()) == serialize_checkpoint(c, 0, init.params()));

  StDetr a(c.model, 0), b(c.model, 0);
  c.train.augment = true;
  std::vector<double> la, lb;
  train(a, data, c.train, [&](const StepLog& l) { la.push_back(l.loss.total); });
  train(b, data, c.train, [&](const StepLog& l) { lb.push_back(l.loss.total); });
  CHECK(la == lb);
  CHECK(la.size() == 3);
  CHECK(serialize_checkpoint(c, 3, a.params()) == serialize_checkpoint(c, 3, b.params()));
  CHECK_FALSE(serialize_checkpoint(c, 3, a.params()) == serialize_checkpoint(c, 3, init.params()));

  const Dataset eval = generate_dataset(c.eval_spec());
  CHECK(evaluate_model(a, eval).to_json().dump() == evaluate_model(b, eval).to_json().dump());
}

TEST_CASE("learning-rate schedule halves on the configured period") {
  StDetr model(tiny_run().model, 0);
  TrainOptions o;
  o.lr = 1e-4;
  o.lr_halving = 100;
  Trainer t(model, o);
  CHECK(t.lr_at(0) == 1e-4);
  CHECK(t.lr_at(99) == 1e-4);
  CHECK(t.lr_at(100) == 5e-5);
  CHECK(t.lr_at(250) == 2.5e-5);
}

TEST_CASE("standard ablation plan covers the four comparisons") {
  ModelConfig base;
  const AblationPlan plan = standard_plan(base);
  REQUIRE(plan.tables.size() == 4);
  std::set<std::string> names;
  for (const AblationCell& c : plan.cells) CHECK(names.insert(c.name).second);
  for (const AblationTable& t : plan.tables)
    for (const auto& [label, cell] : t.rows) CHECK(names.count(cell) == 1);
  const auto find = [&](const std::string& name) -> const ModelConfig& {
    for (const AblationCell& c : plan.cells)
      if (c.name == name) return c.model;
    FAIL("missing cell " << name);
    return plan.cells[0].model;
  };
  // The 1-step baseline is the early model with a one-frame window.
  const auto& window = plan.tables[3];
  REQUIRE(window.rows.size() == 3);
  CHECK(find(window.rows[0].second).steps == 1);
  CHECK(find(window.rows[1].second).steps == 2);
  CHECK(find(window.rows[2].second).steps == 4);
  const auto& tpe = plan.tables[2];
  CHECK_FALSE(find(tpe.rows[0].second).tpe);
  CHECK(find(tpe.rows[1].second).tpe);
  const auto& motion = plan.tables[0];
  CHECK(find(motion.rows[0].second).input_mode == InputMode::kRgb);
  CHECK(find(motion.rows[1].second).input_mode == InputMode::kRgbRgb);
  CHECK(find(motion.rows[2].second).input_mode == InputMode::kRgbOf);
  const auto& agg = plan.tables[1];
  CHECK(find(agg.rows[1].second).aggregation == Aggregation::kEarly);
  CHECK(find(agg.rows[2].second).aggregation == Aggregation::kLate);

  CHECK(full_grid_plan(base).cells.size() == 3 * 2 * 2 * 3);
}

TEST_CASE("ablation report tables carry the reported columns") {
  RunConfig c = tiny_run();
  c.train.epochs = 0;
  AblationPlan plan;
  plan.cells.push_back({"a", c.model});
  ModelConfig late = c.model;
  late.aggregation = Aggregation::kLate;
  plan.cells.push_back({"b", late});
  plan.tables.push_back({"demo", {{"Early", "a"}, {"Late", "b"}}});
  const Dataset train_set = generate_dataset(c.data), eval_set = generate_dataset(c.eval_spec());
  const AblationReport r = run_ablation(plan, c, train_set, eval_set, 3);
  REQUIRE(r.cells.size() == 2);
  CHECK(r.cell("a").reports.size() == 3);
  CHECK(r.cell("a").seeds == std::vector<std::uint64_t>{0, 1, 2});
  const std::string md = r.to_markdown();
  CHECK(md.find("mAP_Total") != std::string::npos);
  CHECK(md.find("AP_50") != std::string::npos);
  CHECK(md.find("AP_75") != std::string::npos);
  CHECK(md.find("mAP_Total") < md.find("AP_50"));
  CHECK(md.find("AP_50") < md.find("AP_75"));
  CHECK(r.to_json().dump() == run_ablation(plan, c, train_set, eval_set, 3).to_json().dump());
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0}) == 2.5);
}
