#pragma once

#include <stdexcept>
#include <string>

namespace fbb {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
  using Error::Error;
};

class NumericalFailure : public Error {
public:
  using Error::Error;
};

class UnsupportedOperation : public Error {
public:
  using Error::Error;
};

// Raised when every particle weight vanishes; `step` is the reverse-time index.
class WeightDegeneracy : public NumericalFailure {
public:
  WeightDegeneracy(const std::string& what, int step)
      : NumericalFailure(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  int step() const noexcept { return step_; }

private:
  int step_;
};

}  // namespace fbb
