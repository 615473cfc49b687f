#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tofsense {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid physical or algorithmic parameter.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Input data does not satisfy an operation's preconditions.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Fock-space truncation too small for the requested state.
class TruncationError : public Error {
 public:
  TruncationError(const std::string& what, double tail) : Error(what), tail_(tail) {}
  double tail() const noexcept { return tail_; }

 private:
  double tail_;
};

/// A populated histogram bin has (numerically) zero predicted probability.
class SupportError : public Error {
 public:
  SupportError(const std::string& what, std::size_t phase, std::size_t bin)
      : Error(what), phase_(phase), bin_(bin) {}
  std::size_t phase() const noexcept { return phase_; }
  std::size_t bin() const noexcept { return bin_; }

 private:
  std::size_t phase_;
  std::size_t bin_;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace tofsense
