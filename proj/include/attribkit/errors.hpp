#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace attribkit {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class SingularMatrix : public Error {
 public:
  using Error::Error;
};

class NoConvergence : public Error {
 public:
  using Error::Error;
};

class DivergedTraining : public Error {
 public:
  using Error::Error;
};

class CorruptFile : public Error {
 public:
  using Error::Error;
};

/// Wraps a failure raised while training on one resampled subset so callers
/// can tell which subset broke.
class SubsetFailure : public Error {
 public:
  SubsetFailure(std::size_t subset_index, const std::string& what)
      : Error("subset " + std::to_string(subset_index) + ": " + what),
        subset_index_(subset_index) {}

  std::size_t subset_index() const noexcept { return subset_index_; }

 private:
  std::size_t subset_index_;
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidInput(msg);
}

}  // namespace detail
}  // namespace attribkit
