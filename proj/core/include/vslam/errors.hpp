#pragma once

#include <stdexcept>
#include <string>

namespace vslam {

// Modeled outcomes (a point behind the camera, a degenerate triangulation,
// a lost track) are returned as std::optional / status values, not thrown.
// The types below are for contract violations and unusable inputs.

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MalformedFile : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MalformedCalib : MalformedFile {
  using MalformedFile::MalformedFile;
};

struct MissingImages : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingFrame : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct VariantMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct LengthMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ImageTooSmall : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NoPose : std::logic_error {
  using std::logic_error::logic_error;
};

struct DanglingKeyFrame : std::logic_error {
  using std::logic_error::logic_error;
};

struct UnknownKeyFrame : std::logic_error {
  using std::logic_error::logic_error;
};

struct WrongMode : std::logic_error {
  using std::logic_error::logic_error;
};

struct TooFewMatches : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct TooFewDescriptors : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct SingularSystem : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateConfiguration : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NoGroundTruth : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NoOverlap : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace vslam
