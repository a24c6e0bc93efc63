// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "stdetr/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "stdetr/error.hpp"

namespace stdetr {

using nlohmann::json;

namespace {

template <typename Word>
void put_word(std::string& out, Word w) {
  for (std::size_t i = 0; i < sizeof(Word); ++i)
    out.push_back(static_cast<char>((w >> (8 * i)) & 0xff));
}

template <typename Word>
Word get_word(std::string_view in) {
  Word w = 0;
  for (std::size_t i = 0; i < sizeof(Word); ++i)
    w |= static_cast<Word>(static_cast<unsigned char>(in[i])) << (8 * i);
  return w;
}

}  // namespace

std::string serialize_checkpoint(const RunConfig& config, std::size_t step,
                                 const ParameterStore& params) {
  const std::size_t width = config.float64 ? 8 : 4;
  json manifest;
  manifest["format"] = "STCK";
  manifest["version"] = kCheckpointVersion;
  manifest["config"] = to_json(config);
  manifest["step"] = step;
  manifest["dtype"] = config.float64 ? "f64" : "f32";
  json entries = json::array();
  std::uint64_t offset = 0;
  for (const Parameter& p : params) {
    entries.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", offset}});
    offset += p.value.size() * width;
  }
  manifest["params"] = entries;
  manifest["data_bytes"] = offset;

  const std::string text = manifest.dump();
  std::string out(kCheckpointMagic);
  put_word<std::uint64_t>(out, text.size());
  out += text;
  for (const Parameter& p : params)
    for (double v : p.value.values()) {
      if (config.float64)
        put_word(out, std::bit_cast<std::uint64_t>(v));
      else
        put_word(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic)
    fail(Errc::kBadMagic, "not an STCK1 checkpoint");
  std::size_t pos = kCheckpointMagic.size();
  if (bytes.size() < pos + 8) fail(Errc::kTruncatedFile, "checkpoint manifest length missing");
  const auto mlen = get_word<std::uint64_t>(bytes.substr(pos, 8));
  pos += 8;
  if (bytes.size() < pos + mlen) fail(Errc::kTruncatedFile, "checkpoint manifest cut short");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(pos, mlen));
  } catch (const json::exception& e) {
    fail(Errc::kIo, std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  pos += mlen;
  if (manifest.value("version", -1) != kCheckpointVersion)
    fail(Errc::kVersionMismatch, "unsupported checkpoint version");
  Checkpoint ck;
  ck.config = run_config_from_json(manifest.at("config"));
  ck.step = manifest.at("step").get<std::size_t>();
  const bool f64 = manifest.at("dtype").get<std::string>() == "f64";
  const std::size_t width = f64 ? 8 : 4;
  const auto data_bytes = manifest.at("data_bytes").get<std::uint64_t>();
  if (bytes.size() != pos + data_bytes)
    fail(Errc::kTruncatedFile, "checkpoint payload size disagrees with its manifest");
  const std::string_view blob = bytes.substr(pos);
  for (const json& e : manifest.at("params")) {
    const Shape shape = e.at("shape").get<Shape>();
    const auto off = e.at("offset").get<std::uint64_t>();
    const std::size_t n = shape_size(shape);
    if (off + n * width > blob.size()) fail(Errc::kTruncatedFile, "parameter blob out of range");
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::string_view w = blob.substr(off + i * width, width);
      values[i] = f64 ? std::bit_cast<double>(get_word<std::uint64_t>(w))
                      : static_cast<double>(std::bit_cast<float>(get_word<std::uint32_t>(w)));
    }
    ck.params.add(e.at("name").get<std::string>(), Tensor(shape, std::move(values)));
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const RunConfig& config, std::size_t step,
                     const ParameterStore& params) {
  const std::string bytes = serialize_checkpoint(config, step, params);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(Errc::kIo, "cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Errc::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str());
}

void restore(StDetr& model, const Checkpoint& ckpt) {
  if (model_config_json(model.config()) != model_config_json(ckpt.config.model))
    fail(Errc::kCheckpointMismatch, "checkpoint was written for a different model config");
  if (model.params().size() != ckpt.params.size())
    fail(Errc::kCheckpointMismatch, "checkpoint parameter count differs from the model");
  for (Parameter& p : model.params()) {
    const Parameter* src = ckpt.params.find(p.name);
    if (src == nullptr || src->value.shape() != p.value.shape())
      fail(Errc::kCheckpointMismatch, "checkpoint lacks a matching '" + p.name + "'");
    p.value = src->value;
  }
}

}  // namespace stdetr
