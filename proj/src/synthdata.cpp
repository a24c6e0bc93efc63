// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "stdetr/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <exception>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stdetr/error.hpp"

namespace stdetr {

using nlohmann::json;

std::size_t input_channels(InputMode mode) {
  switch (mode) {
    case InputMode::kRgb: return 3;
    case InputMode::kRgbRgb: return 6;
    case InputMode::kRgbOf: return 5;
  }
  fail(Errc::kBadMode, "unknown input mode");
}

std::string_view to_string(InputMode mode) {
  switch (mode) {
    case InputMode::kRgb: return "rgb";
    case InputMode::kRgbRgb: return "rgb_rgb";
    case InputMode::kRgbOf: return "rgb_of";
  }
  fail(Errc::kBadMode, "unknown input mode");
}

InputMode parse_input_mode(std::string_view name) {
  if (name == "rgb") return InputMode::kRgb;
  if (name == "rgb_rgb") return InputMode::kRgbRgb;
  if (name == "rgb_of") return InputMode::kRgbOf;
  fail(Errc::kBadMode, "unknown input mode '" + std::string(name) + "'");
}

void DatasetSpec::validate() const {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) fail(Errc::kConfig, "dataset spec: " + what);
  };
  check(steps >= 1, "steps must be >= 1");
  check(height >= 8 && width >= 8, "image must be at least 8x8");
  check(moving.lo >= 0 && moving.lo <= moving.hi, "moving range");
  check(statics.lo >= 0 && statics.lo <= statics.hi, "static range");
  check(speed.lo >= 1 && speed.lo <= speed.hi, "speed range must be nonempty with lo >= 1");
  check(size.lo >= 1 && size.lo <= size.hi, "size range");
  check(noise >= 0.0 && noise < 1.0, "noise must lie in [0, 1)");
}

std::vector<GroundTruth> FrameSequence::ground_truth(std::size_t t) const {
  std::vector<GroundTruth> out;
  const double W = static_cast<double>(width), H = static_cast<double>(height);
  for (const PixelBox& b : moving_boxes.at(t))
    out.push_back({kMovingClass, Box{(b.x + 0.5 * b.w) / W, (b.y + 0.5 * b.h) / H, b.w / W,
                                     b.h / H}});
  return out;
}

namespace {

struct SceneObject {
  int x0 = 0, y0 = 0, side = 0, vx = 0, vy = 0;
  float color[3] = {0, 0, 0};
  bool moving = false;

  // Union of the object's footprint over the whole sequence.
  PixelBox sweep(int steps) const {
    const int xe = x0 + vx * (steps - 1), ye = y0 + vy * (steps - 1);
    const int xl = std::min(x0, xe), yl = std::min(y0, ye);
    return {xl, yl, std::max(x0, xe) - xl + side, std::max(y0, ye) - yl + side};
  }
};

bool overlaps(const PixelBox& a, const PixelBox& b) {
  return a.x < b.x + b.w && b.x < a.x + a.w && a.y < b.y + b.h && b.y < a.y + a.h;
}

bool place(SceneObject& obj, const DatasetSpec& spec, const std::vector<PixelBox>& taken,
           std::mt19937_64& rng) {
  const int steps = static_cast<int>(spec.steps);
  const int W = static_cast<int>(spec.width), H = static_cast<int>(spec.height);
  const int span_x = obj.vx * (steps - 1), span_y = obj.vy * (steps - 1);
  const int xlo = std::max(0, -span_x), xhi = std::min(W - obj.side, W - obj.side - span_x);
  const int ylo = std::max(0, -span_y), yhi = std::min(H - obj.side, H - obj.side - span_y);
  if (xlo > xhi || ylo > yhi) return false;
  std::uniform_int_distribution<int> dx(xlo, xhi), dy(ylo, yhi);
  for (int attempt = 0; attempt < 64; ++attempt) {
    obj.x0 = dx(rng);
    obj.y0 = dy(rng);
    const PixelBox sw = obj.sweep(steps);
    if (std::none_of(taken.begin(), taken.end(), [&](const PixelBox& b) { return overlaps(b, sw); }))
      return true;
  }
  return false;
}

}  // namespace

FrameSequence generate_sequence(const DatasetSpec& spec, std::size_t index) {
  spec.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<int> n_moving(spec.moving.lo, spec.moving.hi);
  std::uniform_int_distribution<int> n_static(spec.statics.lo, spec.statics.hi);
  std::uniform_int_distribution<int> side(spec.size.lo, spec.size.hi);
  std::uniform_int_distribution<int> vel(-spec.speed.hi, spec.speed.hi);
  std::uniform_real_distribution<double> intensity(0.35, 1.0);

  const int moving = n_moving(rng), statics = n_static(rng);
  const int steps = static_cast<int>(spec.steps);
  std::vector<SceneObject> objects;
  bool placed = false;
  for (int restart = 0; restart < 32 && !placed; ++restart) {
    objects.clear();
    std::vector<PixelBox> taken;
    placed = true;
    // Moving and static objects draw size and colour from the same samplers,
    // so no single frame tells them apart.
    for (int k = 0; k < moving + statics && placed; ++k) {
      SceneObject obj;
      obj.moving = k < moving;
      obj.side = side(rng);
      for (float& c : obj.color) c = static_cast<float>(intensity(rng));
      if (obj.moving) {
        int mag2 = 0;
        do {
          obj.vx = vel(rng);
          obj.vy = vel(rng);
          mag2 = obj.vx * obj.vx + obj.vy * obj.vy;
        } while (mag2 < spec.speed.lo * spec.speed.lo || mag2 > spec.speed.hi * spec.speed.hi);
      }
      placed = place(obj, spec, taken, rng);
      if (placed) {
        taken.push_back(obj.sweep(steps));
        objects.push_back(obj);
      }
    }
  }
  if (!placed)
    fail(Errc::kObjectsDontFit, "could not place " + std::to_string(moving + statics) +
                                    " objects in a " + std::to_string(spec.width) + "x" +
                                    std::to_string(spec.height) + " image");

  FrameSequence out;
  out.steps = spec.steps;
  out.height = spec.height;
  out.width = spec.width;
  out.seed = spec.seed;
  out.index = index;
  const std::size_t plane = spec.height * spec.width;
  std::uniform_real_distribution<double> noise(0.0, spec.noise);
  for (int t = 0; t < steps; ++t) {
    std::vector<float> frame(3 * plane);
    for (float& v : frame) v = static_cast<float>(spec.noise > 0.0 ? noise(rng) : 0.0);
    std::vector<float> flow(2 * plane, 0.0f);
    std::vector<PixelBox> boxes;
    for (const SceneObject& obj : objects) {
      const int x = obj.x0 + obj.vx * t, y = obj.y0 + obj.vy * t;
      for (int yy = y; yy < y + obj.side; ++yy)
        for (int xx = x; xx < x + obj.side; ++xx) {
          const std::size_t p = static_cast<std::size_t>(yy) * spec.width + static_cast<std::size_t>(xx);
          for (int c = 0; c < 3; ++c) frame[c * plane + p] = obj.color[c];
          if (obj.moving && t > 0) {
            flow[p] = static_cast<float>(obj.vx / static_cast<double>(spec.width));
            flow[plane + p] = static_cast<float>(obj.vy / static_cast<double>(spec.height));
          }
        }
      if (obj.moving) boxes.push_back({x, y, obj.side, obj.side});
    }
    out.frames.push_back(std::move(frame));
    out.flow.push_back(std::move(flow));
    out.moving_boxes.push_back(std::move(boxes));
  }
  return out;
}

Tensor render_input(const FrameSequence& seq, InputMode mode, std::size_t t) {
  if (t >= seq.steps)
    fail(Errc::kInvalidArgument, "step " + std::to_string(t) + " outside sequence of " +
                                     std::to_string(seq.steps));
  const std::size_t plane = seq.height * seq.width;
  std::vector<float> parts = seq.frames[t];
  switch (mode) {
    case InputMode::kRgb: break;
    case InputMode::kRgbRgb: {
      const auto& prev = seq.frames[t == 0 ? 0 : t - 1];
      parts.insert(parts.end(), prev.begin(), prev.end());
      break;
    }
    case InputMode::kRgbOf:
      parts.insert(parts.end(), seq.flow[t].begin(), seq.flow[t].end());
      break;
    default: fail(Errc::kBadMode, "unknown input mode");
  }
  const std::size_t channels = parts.size() / plane;
  std::vector<double> values(parts.begin(), parts.end());
  if (mode == InputMode::kRgbOf) {
    // Stored flow is a fraction of the image; feed it in px/step so it sits on
    // the same O(1) scale as the colour channels.
    for (std::size_t p = 0; p < plane; ++p) {
      values[3 * plane + p] *= static_cast<double>(seq.width);
      values[4 * plane + p] *= static_cast<double>(seq.height);
    }
  }
  return Tensor({channels, seq.height, seq.width}, std::move(values));
}

FrameSequence dihedral_transform(const FrameSequence& seq, unsigned op) {
  if (op >= 8) fail(Errc::kInvalidArgument, "dihedral op must be in [0, 8)");
  const bool transpose = (op & 4) != 0, mirror_x = (op & 1) != 0, mirror_y = (op & 2) != 0;
  if (transpose && seq.height != seq.width)
    fail(Errc::kShapeMismatch, "transpose needs a square image");
  const int W = static_cast<int>(seq.width), H = static_cast<int>(seq.height);
  const std::size_t plane = seq.height * seq.width;
  // Destination pixel of source (x, y).
  auto dest = [&](int x, int y) {
    if (transpose) std::swap(x, y);
    if (mirror_x) x = W - 1 - x;
    if (mirror_y) y = H - 1 - y;
    return static_cast<std::size_t>(y) * seq.width + static_cast<std::size_t>(x);
  };
  FrameSequence out = seq;
  for (std::size_t t = 0; t < seq.steps; ++t) {
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const std::size_t src = static_cast<std::size_t>(y) * seq.width + static_cast<std::size_t>(x);
        const std::size_t dst = dest(x, y);
        for (std::size_t c = 0; c < 3; ++c) out.frames[t][c * plane + dst] = seq.frames[t][c * plane + src];
        float u = seq.flow[t][src], v = seq.flow[t][plane + src];
        if (transpose) std::swap(u, v);
        out.flow[t][dst] = mirror_x ? -u : u;
        out.flow[t][plane + dst] = mirror_y ? -v : v;
      }
    for (PixelBox& b : out.moving_boxes[t]) {
      if (transpose) b = {b.y, b.x, b.h, b.w};
      if (mirror_x) b.x = W - b.x - b.w;
      if (mirror_y) b.y = H - b.y - b.h;
    }
  }
  return out;
}

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset d;
  d.spec = spec;
  d.sequences.resize(spec.num_sequences);
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(spec.num_sequences); ++i) {
    try {
      d.sequences[i] = generate_sequence(spec, static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical(stdetr_generate_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return d;
}

// --- STDS1 container ---------------------------------------------------------

namespace {

json spec_to_json(const DatasetSpec& s) {
  return json{{"num_sequences", s.num_sequences},
              {"steps", s.steps},
              {"height", s.height},
              {"width", s.width},
              {"moving", {s.moving.lo, s.moving.hi}},
              {"statics", {s.statics.lo, s.statics.hi}},
              {"speed", {s.speed.lo, s.speed.hi}},
              {"size", {s.size.lo, s.size.hi}},
              {"noise", s.noise},
              {"seed", s.seed}};
}

DatasetSpec spec_from_json(const json& j) {
  DatasetSpec s;
  s.num_sequences = j.at("num_sequences").get<std::size_t>();
  s.steps = j.at("steps").get<std::size_t>();
  s.height = j.at("height").get<std::size_t>();
  s.width = j.at("width").get<std::size_t>();
  auto range = [&](const char* k) { return IntRange{j.at(k).at(0).get<int>(), j.at(k).at(1).get<int>()}; };
  s.moving = range("moving");
  s.statics = range("statics");
  s.speed = range("speed");
  s.size = range("size");
  s.noise = j.at("noise").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[i])) << (8 * i);
  return v;
}

void put_floats(std::string& out, const std::vector<float>& values) {
  for (float f : values) {
    const auto u = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
  }
}

std::vector<float> get_floats(std::string_view in, std::size_t count) {
  std::vector<float> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::uint32_t u = 0;
    for (int i = 0; i < 4; ++i)
      u |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[4 * k + i])) << (8 * i);
    out[k] = std::bit_cast<float>(u);
  }
  return out;
}

}  // namespace

std::string serialize_dataset(const Dataset& data) {
  const DatasetSpec& s = data.spec;
  const std::size_t plane = s.height * s.width;
  const std::size_t floats = s.steps * 5 * plane;
  json header;
  header["format"] = "STDS";
  header["version"] = kDatasetVersion;
  header["spec"] = spec_to_json(s);
  header["layout"] = {"frames[steps,3,height,width]", "flow[steps,2,height,width]"};
  json seqs = json::array();
  std::uint64_t offset = 0;
  for (const FrameSequence& q : data.sequences) {
    if (q.steps != s.steps || q.height != s.height || q.width != s.width)
      fail(Errc::kShapeMismatch, "sequence geometry disagrees with dataset spec");
    json boxes = json::array();
    for (const auto& step : q.moving_boxes) {
      json row = json::array();
      for (const PixelBox& b : step) row.push_back({b.x, b.y, b.w, b.h});
      boxes.push_back(row);
    }
    seqs.push_back({{"index", q.index}, {"seed", q.seed}, {"offset", offset},
                    {"floats", floats}, {"boxes", boxes}});
    offset += floats * 4;
  }
  header["sequences"] = seqs;
  header["data_bytes"] = offset;

  const std::string text = header.dump();
  std::string out(kDatasetMagic);
  put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const FrameSequence& q : data.sequences) {
    for (const auto& f : q.frames) put_floats(out, f);
    for (const auto& f : q.flow) put_floats(out, f);
  }
  return out;
}

Dataset deserialize_dataset(std::string_view bytes) {
  if (bytes.size() < kDatasetMagic.size() || bytes.substr(0, kDatasetMagic.size()) != kDatasetMagic)
    fail(Errc::kBadMagic, "not an STDS1 dataset");
  std::size_t pos = kDatasetMagic.size();
  if (bytes.size() < pos + 8) fail(Errc::kTruncatedFile, "dataset header length missing");
  const std::uint64_t hlen = get_u64(bytes.substr(pos, 8));
  pos += 8;
  if (bytes.size() < pos + hlen) fail(Errc::kTruncatedFile, "dataset header cut short");
  json header;
  try {
    header = json::parse(bytes.substr(pos, hlen));
  } catch (const json::exception& e) {
    fail(Errc::kIo, std::string("dataset header is not valid JSON: ") + e.what());
  }
  pos += hlen;
  if (header.value("version", -1) != kDatasetVersion)
    fail(Errc::kVersionMismatch, "dataset version " + header.value("version", json()).dump() +
                                     ", expected " + std::to_string(kDatasetVersion));
  Dataset d;
  d.spec = spec_from_json(header.at("spec"));
  const std::uint64_t data_bytes = header.at("data_bytes").get<std::uint64_t>();
  if (bytes.size() != pos + data_bytes)
    fail(Errc::kTruncatedFile, "dataset holds " + std::to_string(bytes.size()) +
                                   " bytes, header predicts " + std::to_string(pos + data_bytes));
  const std::string_view blob = bytes.substr(pos);
  const std::size_t plane = d.spec.height * d.spec.width;
  for (const json& js : header.at("sequences")) {
    FrameSequence q;
    q.steps = d.spec.steps;
    q.height = d.spec.height;
    q.width = d.spec.width;
    q.index = js.at("index").get<std::size_t>();
    q.seed = js.at("seed").get<std::uint64_t>();
    const std::uint64_t off = js.at("offset").get<std::uint64_t>();
    const std::size_t floats = js.at("floats").get<std::size_t>();
    if (floats != q.steps * 5 * plane || off + floats * 4 > blob.size())
      fail(Errc::kTruncatedFile, "sequence record out of bounds");
    const std::vector<float> all = get_floats(blob.substr(off, floats * 4), floats);
    for (std::size_t t = 0; t < q.steps; ++t)
      q.frames.emplace_back(all.begin() + t * 3 * plane, all.begin() + (t + 1) * 3 * plane);
    const std::size_t flow0 = q.steps * 3 * plane;
    for (std::size_t t = 0; t < q.steps; ++t)
      q.flow.emplace_back(all.begin() + flow0 + t * 2 * plane,
                          all.begin() + flow0 + (t + 1) * 2 * plane);
    for (const json& step : js.at("boxes")) {
      std::vector<PixelBox> row;
      for (const json& b : step)
        row.push_back({b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()});
      q.moving_boxes.push_back(std::move(row));
    }
    d.sequences.push_back(std::move(q));
  }
  return d;
}

void write_dataset(const Dataset& data, const std::filesystem::path& path) {
  const std::string bytes = serialize_dataset(data);
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(Errc::kIo, "cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(Errc::kIo, "write failed: " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Errc::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_dataset(ss.str());
}

}  // namespace stdetr
