// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stdetr {

enum class Errc {
  kShapeMismatch,
  kNonFinite,
  kNotScalar,
  kNonDeterministicFunction,
  kInvalidArgument,
  kDimNotDivisible,
  kChannelMismatch,
  kMissingPerStepLabels,
  kDegenerateBox,
  kInvalidAssignment,
  kTooManyObjects,
  kObjectsDontFit,
  kBadMode,
  kBadMagic,
  kVersionMismatch,
  kTruncatedFile,
  kCountMismatch,
  kNotRowStochastic,
  kBadLayout,
  kConfig,
  kCheckpointMismatch,
  kIo,
};

std::string_view errc_name(Errc code);

/// Every failure surfaced by the library carries one of the codes above so
/// callers (and the CLI's error JSON) can dispatch without string matching.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace stdetr
