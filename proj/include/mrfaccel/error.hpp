#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mrfaccel {

/// Raised for contract violations and malformed inputs across the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t epoch, std::size_t step)
      : Error(what), epoch_(epoch), step_(step) {}

  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t epoch_;
  std::size_t step_;
};

}  // namespace mrfaccel
