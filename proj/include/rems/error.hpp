#pragma once

#include <stdexcept>
#include <string>

namespace rems {

// Base class for everything thrown by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Input data violates a documented invariant (non-finite joint, bad shape, ...).
struct ValidationError : Error {
  explicit ValidationError(const std::string& what) : Error(what) {}
};

// Hip center and middle-spine coincide; no scale can be derived from the frame.
struct DegenerateSkeleton : Error {
  explicit DegenerateSkeleton(const std::string& what) : Error(what) {}
};

// Eval-mode inference requested on a model whose normalization statistics
// were never populated by training.
struct ModelNotTrained : Error {
  explicit ModelNotTrained(const std::string& what) : Error(what) {}
};

struct DimensionMismatch : Error {
  explicit DimensionMismatch(const std::string& what) : Error(what) {}
};

// Malformed text or binary input (skeleton files, manifests, checkpoints, ...).
struct ParseError : Error {
  explicit ParseError(const std::string& what) : Error(what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(what) {}
};

}  // namespace rems
