#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace skipgrid {

class Error : public std::runtime_error {
 public:
  enum class Kind {
    kDimension,  // incompatible tensor shapes
    kConfig,     // invalid configuration value
    kContract,   // API precondition violated
    kIndex,      // id / index out of range
    kNumeric,    // non-finite input where finite required
    kData,       // dataset problem (missing, empty, malformed)
    kIo,         // file read/write failure
  };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

  static Error dimension(const std::string& m) { return {Kind::kDimension, m}; }
  static Error config(const std::string& m) { return {Kind::kConfig, m}; }
  static Error contract(const std::string& m) { return {Kind::kContract, m}; }
  static Error index(const std::string& m) { return {Kind::kIndex, m}; }
  static Error numeric(const std::string& m) { return {Kind::kNumeric, m}; }
  static Error data(const std::string& m) { return {Kind::kData, m}; }
  static Error io(const std::string& m) { return {Kind::kIo, m}; }

 private:
  Kind kind_;
};

// Training blew up: carries the iteration so a partial report can say where.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(long iteration, float loss, const std::string& what)
      : std::runtime_error(what), iteration_(iteration), loss_(loss) {}
  long iteration() const { return iteration_; }
  float loss() const { return loss_; }

 private:
  long iteration_;
  float loss_;
};

}  // namespace skipgrid
