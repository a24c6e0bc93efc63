// Copyright 2026 The stdetr Authors.
// SPDX-License-Identifier: Apache-2.0

#include "stdetr/error.hpp"

namespace stdetr {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::kShapeMismatch: return "ShapeMismatch";
    case Errc::kNonFinite: return "NonFinite";
    case Errc::kNotScalar: return "NotScalar";
    case Errc::kNonDeterministicFunction: return "NonDeterministicFunction";
    case Errc::kInvalidArgument: return "InvalidArgument";
    case Errc::kDimNotDivisible: return "DimNotDivisible";
    case Errc::kChannelMismatch: return "ChannelMismatch";
    case Errc::kMissingPerStepLabels: return "MissingPerStepLabels";
    case Errc::kDegenerateBox: return "DegenerateBox";
    case Errc::kInvalidAssignment: return "InvalidAssignment";
    case Errc::kTooManyObjects: return "TooManyObjects";
    case Errc::kObjectsDontFit: return "ObjectsDontFit";
    case Errc::kBadMode: return "BadMode";
    case Errc::kBadMagic: return "BadMagic";
    case Errc::kVersionMismatch: return "VersionMismatch";
    case Errc::kTruncatedFile: return "TruncatedFile";
    case Errc::kCountMismatch: return "CountMismatch";
    case Errc::kNotRowStochastic: return "NotRowStochastic";
    case Errc::kBadLayout: return "BadLayout";
    case Errc::kConfig: return "ConfigError";
    case Errc::kCheckpointMismatch: return "CheckpointMismatch";
    case Errc::kIo: return "IoError";
  }
  return "Unknown";
}

}  // namespace stdetr
