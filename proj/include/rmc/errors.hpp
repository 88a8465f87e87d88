#pragma once

#include <stdexcept>
#include <string>

namespace rmc {

/// Problems reading the binary clip and checkpoint formats. Each condition
/// has its own kind so callers can tell a bad magic from a short file.
class FormatError : public std::runtime_error {
 public:
  enum class Kind { BadMagic, BadVersion, Truncated, Mismatch, Io };

  FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int iteration, std::string part, double value)
      : std::runtime_error("loss " + part + " became non-finite (" + std::to_string(value) + ") at iteration " +
                           std::to_string(iteration)),
        iteration_(iteration),
        part_(std::move(part)) {}
  int iteration() const { return iteration_; }
  const std::string& part() const { return part_; }

 private:
  int iteration_;
  std::string part_;
};

}  // namespace rmc
