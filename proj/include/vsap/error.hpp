#pragma once

#include <stdexcept>
#include <string>

namespace vsap {

enum class Errc {
  kInvalidArgument,
  kInvalidDepth,
  kOutOfBounds,
  kBehindCamera,
  kGeneration,
  kEmptyBatch,
  kEmptyPositiveSet,
  kUndefinedAp,
  kZeroNorm,
  kCorruptedState,
  kShapeMismatch,
  kInsufficientMatches,
  kIo,
  kFormat,
  kConfig,
};

const char* errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

inline const char* errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::kInvalidArgument: return "invalid-argument";
    case Errc::kInvalidDepth: return "invalid-depth";
    case Errc::kOutOfBounds: return "out-of-bounds";
    case Errc::kBehindCamera: return "behind-camera";
    case Errc::kGeneration: return "generation";
    case Errc::kEmptyBatch: return "empty-batch";
    case Errc::kEmptyPositiveSet: return "empty-positive-set";
    case Errc::kUndefinedAp: return "undefined-ap";
    case Errc::kZeroNorm: return "zero-norm";
    case Errc::kCorruptedState: return "corrupted-state";
    case Errc::kShapeMismatch: return "shape-mismatch";
    case Errc::kInsufficientMatches: return "insufficient-matches";
    case Errc::kIo: return "io";
    case Errc::kFormat: return "format";
    case Errc::kConfig: return "config";
  }
  return "unknown";
}

}  // namespace vsap
