// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "stdetr/setmatch.hpp"
#include "stdetr/tensor.hpp"

namespace stdetr {

enum class InputMode { kRgb, kRgbRgb, kRgbOf };

std::size_t input_channels(InputMode mode);
std::string_view to_string(InputMode mode);
/// "rgb", "rgb_rgb" or "rgb_of"; anything else throws BadMode.
InputMode parse_input_mode(std::string_view name);

struct IntRange {
  int lo = 0;
  int hi = 0;
  bool operator==(const IntRange&) const = default;
};

struct DatasetSpec {
  std::size_t num_sequences = 200;
  std::size_t steps = 4;  // frames per sequence
  std::size_t height = 64;
  std::size_t width = 64;
  IntRange moving{1, 3};   // moving objects per sequence
  IntRange statics{1, 3};  // unlabeled static distractors
  IntRange speed{1, 3};    // |velocity| in px/step
  IntRange size{8, 16};    // square side in px
  double noise = 0.1;      // background noise amplitude
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const DatasetSpec&) const = default;
};

/// Axis-aligned pixel rectangle, top-left anchored.
struct PixelBox {
  int x = 0, y = 0, w = 0, h = 0;
  bool operator==(const PixelBox&) const = default;
};

struct FrameSequence {
  std::size_t steps = 0, height = 0, width = 0;
  std::vector<std::vector<float>> frames;  // per step: 3 x H x W, values in [0, 1]
  std::vector<std::vector<float>> flow;    // per step: 2 x H x W (dx, dy) / image size
  std::vector<std::vector<PixelBox>> moving_boxes;  // per step, moving objects only
  std::uint64_t seed = 0;
  std::size_t index = 0;

  /// Labels at step t in normalized (cx, cy, w, h).
  std::vector<GroundTruth> ground_truth(std::size_t t) const;
  bool operator==(const FrameSequence&) const = default;
};

/// Pure function of (spec.seed, index). Throws ObjectsDontFit when the
/// requested objects cannot be placed without overlapping.
FrameSequence generate_sequence(const DatasetSpec& spec, std::size_t index);

/// Network input for step t as a C x H x W tensor:
///   rgb     -> frame t
///   rgb_rgb -> frame t, frame t-1 (frame 0 repeated at t = 0)
///   rgb_of  -> frame t, flow t in px/step
Tensor render_input(const FrameSequence& seq, InputMode mode, std::size_t t);

/// One of the eight symmetries of the square applied to frames, flow and
/// labels alike: bit 0 mirrors x, bit 1 mirrors y, bit 2 transposes first
/// (square images only). 0 is the identity.
FrameSequence dihedral_transform(const FrameSequence& seq, unsigned op);

struct Dataset {
  DatasetSpec spec;
  std::vector<FrameSequence> sequences;
  bool operator==(const Dataset&) const = default;
};

Dataset generate_dataset(const DatasetSpec& spec);

/// STDS1 container: 5-byte magic, u64 little-endian header length, UTF-8 JSON
/// header (spec, layout, per-sequence offsets and labels), then float32
/// little-endian tensors (frames then flow, per sequence).
void write_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);
std::string serialize_dataset(const Dataset& data);
Dataset deserialize_dataset(std::string_view bytes);

inline constexpr std::string_view kDatasetMagic = "STDS1";
inline constexpr int kDatasetVersion = 1;

}  // namespace stdetr
