#pragma once

#include <stdexcept>
#include <string>

namespace gcalib {

enum class ErrorCode {
  // geometry
  NonPositiveDepth,
  DegenerateRays,
  NegativeDepth,
  InsufficientPoints,
  CollinearPoints,
  // ground extraction
  CameraFacingSky,
  RayParallelToGround,
  PointBehindCamera,
  InsufficientMatches,
  DecompositionFailed,
  CollinearTriple,
  RankDeficient,
  NoGroundSeed,
  // optimizer
  PointAtInfinity,
  SolverDiverged,
  InsufficientFeatures,
  SingularBlock,
  DegenerateGeometry,
  RankDeficientSum,
  EmptySet,
  // metrics
  NoSecondCamera,
  EmptyMatches,
  // simulator / io
  EmptyScene,
  IoError,
  SchemaVersionMismatch,
  MalformedField,
  InvalidConfig,
};

const char* to_string(ErrorCode code) noexcept;

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Parse failure with a location in the source text (1-based; 0 when unknown).
class MalformedFieldError : public Error {
 public:
  MalformedFieldError(const std::string& what, std::size_t line, std::size_t column)
      : Error(ErrorCode::MalformedField, what + " (line " + std::to_string(line) + ", column " +
                                             std::to_string(column) + ")"),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

}  // namespace gcalib
