#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rcpm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// log_x(y) is undefined: y sits on the cut locus of x (the antipode on a sphere).
class CutLocus : public Error {
 public:
  using Error::Error;
};

/// A raw vector cannot be projected onto the manifold (zero-length sphere slice).
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

class SingularJacobian : public Error {
 public:
  using Error::Error;
};

class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(const std::string& what, std::ptrdiff_t sample = -1, long step = -1)
      : Error(what), sample_(sample), step_(step) {}
  std::ptrdiff_t sample() const { return sample_; }
  long step() const { return step_; }

 private:
  std::ptrdiff_t sample_;
  long step_;
};

class InvalidBatch : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace rcpm
