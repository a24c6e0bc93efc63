// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "stdetr/runconfig.hpp"

#include <charconv>
#include <fstream>

#include "stdetr/error.hpp"

namespace stdetr {

using nlohmann::json;

DatasetSpec RunConfig::eval_spec() const {
  DatasetSpec s = data;
  s.num_sequences = eval_sequences;
  s.seed = eval_seed;
  return s;
}

json model_config_json(const ModelConfig& m) {
  return {{"T", m.steps},
          {"Nq", m.queries},
          {"d", m.d_model},
          {"heads", m.heads},
          {"enc_layers", m.enc_layers},
          {"dec_layers", m.dec_layers},
          {"ff_mult", m.ff_mult},
          {"aggregation", std::string(to_string(m.aggregation))},
          {"seq2seq", m.seq2seq},
          {"tpe", m.tpe},
          {"input_mode", std::string(to_string(m.input_mode))},
          {"image_height", m.image_height},
          {"image_width", m.image_width}};
}

json to_json(const RunConfig& c) {
  json j = model_config_json(c.model);
  const DatasetSpec& d = c.data;
  j.update(json{{"num_sequences", d.num_sequences},
                {"data_steps", d.steps},
                {"moving_min", d.moving.lo},
                {"moving_max", d.moving.hi},
                {"static_min", d.statics.lo},
                {"static_max", d.statics.hi},
                {"speed_min", d.speed.lo},
                {"speed_max", d.speed.hi},
                {"size_min", d.size.lo},
                {"size_max", d.size.hi},
                {"noise", d.noise},
                {"data_seed", d.seed},
                {"eval_sequences", c.eval_sequences},
                {"eval_seed", c.eval_seed},
                {"epochs", c.train.epochs},
                {"lr", c.train.lr},
                {"lr_halving", c.train.lr_halving},
                {"batch", c.train.batch},
                {"clip_norm", c.train.clip_norm},
                {"seed", c.train.seed},
                {"augment", c.train.augment},
                {"train_data", c.train_data},
                {"eval_data", c.eval_data},
                {"output_dir", c.output_dir},
                {"float64", c.float64}});
  return j;
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) fail(Errc::kConfig, "config must be a flat JSON object");
  const json defaults = to_json(RunConfig{});
  for (const auto& [k, v] : j.items()) {
    if (!defaults.contains(k)) fail(Errc::kConfig, "unknown config key '" + k + "'");
    if (v.is_structured()) fail(Errc::kConfig, "config key '" + k + "' must be a scalar");
  }
  json f = defaults;
  f.update(j);
  RunConfig c;
  try {
    ModelConfig& m = c.model;
    m.steps = f.at("T").get<std::size_t>();
    m.queries = f.at("Nq").get<std::size_t>();
    m.d_model = f.at("d").get<std::size_t>();
    m.heads = f.at("heads").get<std::size_t>();
    m.enc_layers = f.at("enc_layers").get<std::size_t>();
    m.dec_layers = f.at("dec_layers").get<std::size_t>();
    m.ff_mult = f.at("ff_mult").get<std::size_t>();
    m.aggregation = parse_aggregation(f.at("aggregation").get<std::string>());
    m.seq2seq = f.at("seq2seq").get<bool>();
    m.tpe = f.at("tpe").get<bool>();
    m.input_mode = parse_input_mode(f.at("input_mode").get<std::string>());
    m.image_height = f.at("image_height").get<std::size_t>();
    m.image_width = f.at("image_width").get<std::size_t>();
    DatasetSpec& d = c.data;
    d.num_sequences = f.at("num_sequences").get<std::size_t>();
    d.steps = f.at("data_steps").get<std::size_t>();
    d.height = m.image_height;
    d.width = m.image_width;
    d.moving = {f.at("moving_min").get<int>(), f.at("moving_max").get<int>()};
    d.statics = {f.at("static_min").get<int>(), f.at("static_max").get<int>()};
    d.speed = {f.at("speed_min").get<int>(), f.at("speed_max").get<int>()};
    d.size = {f.at("size_min").get<int>(), f.at("size_max").get<int>()};
    d.noise = f.at("noise").get<double>();
    d.seed = f.at("data_seed").get<std::uint64_t>();
    c.eval_sequences = f.at("eval_sequences").get<std::size_t>();
    c.eval_seed = f.at("eval_seed").get<std::uint64_t>();
    c.train.epochs = f.at("epochs").get<std::size_t>();
    c.train.lr = f.at("lr").get<double>();
    c.train.lr_halving = f.at("lr_halving").get<std::size_t>();
    c.train.batch = f.at("batch").get<std::size_t>();
    c.train.clip_norm = f.at("clip_norm").get<double>();
    c.train.seed = f.at("seed").get<std::uint64_t>();
    c.train.augment = f.at("augment").get<bool>();
    c.train_data = f.at("train_data").get<std::string>();
    c.eval_data = f.at("eval_data").get<std::string>();
    c.output_dir = f.at("output_dir").get<std::string>();
    c.float64 = f.at("float64").get<bool>();
  } catch (const json::exception& e) {
    fail(Errc::kConfig, std::string("bad config value: ") + e.what());
  }
  c.model.validate();
  c.data.validate();
  return c;
}

void apply_override(json& flat, std::string_view key_view, std::string_view value) {
  const std::string key(key_view);
  const json defaults = to_json(RunConfig{});
  if (!defaults.contains(key)) fail(Errc::kConfig, "unknown config key '" + key + "'");
  const json& proto = defaults.at(key);
  const std::string text(value);
  auto bad = [&] { fail(Errc::kConfig, "cannot parse '" + text + "' for key '" + key + "'"); };
  if (proto.is_boolean()) {
    if (text == "true" || text == "1") flat[key] = true;
    else if (text == "false" || text == "0") flat[key] = false;
    else bad();
  } else if (proto.is_number_unsigned()) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size()) bad();
    flat[key] = v;
  } else if (proto.is_number_integer()) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size()) bad();
    flat[key] = v;
  } else if (proto.is_number_float()) {
    try {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used != text.size()) bad();
      flat[key] = v;
    } catch (const std::logic_error&) {
      bad();
    }
  } else {
    flat[key] = text;
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) fail(Errc::kConfig, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    fail(Errc::kConfig, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace stdetr
