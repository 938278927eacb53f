#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace latmark {

// Bad shapes, out-of-domain parameters, malformed inputs.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// The stationary system has no unique solution (reducible chain, Q = 0, ...).
class NonUniqueStationary : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The forward recursion hit a step whose total mass is zero. `step()` is the
// 0-based observation index at which it happened.
class ZeroLikelihood : public std::runtime_error {
 public:
  explicit ZeroLikelihood(std::size_t step)
      : std::runtime_error("zero likelihood at observation " + std::to_string(step + 1)),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

namespace detail {

[[noreturn]] inline void invalid(const std::string& what) { throw InvalidArgument(what); }

inline void require(bool cond, const char* what) {
  if (!cond) throw InvalidArgument(what);
}

}  // namespace detail
}  // namespace latmark
