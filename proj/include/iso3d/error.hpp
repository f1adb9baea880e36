#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace iso3d {

/// Malformed text input (OFF meshes, spec sidecars, CSV). Carries the 1-based line.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Bad magic, truncated payload or otherwise unreadable binary file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or input shape disagrees with what a model expects.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int epoch, const std::string& what)
      : std::runtime_error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}

  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

/// Exhaustive search refused because the problem is too large to enumerate.
class VerificationRefused : public std::runtime_error {
 public:
  VerificationRefused(std::size_t cardinality, const std::string& what)
      : std::runtime_error(what), cardinality_(cardinality) {}

  std::size_t cardinality() const noexcept { return cardinality_; }

 private:
  std::size_t cardinality_;
};

}  // namespace iso3d
