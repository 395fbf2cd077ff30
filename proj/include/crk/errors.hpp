#ifndef CRK_ERRORS_HPP
#define CRK_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace crk {

/// Thrown when inputs violate an operation's preconditions (bad shapes,
/// out-of-range levels, malformed files). The CLI maps this to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// Thrown when a well-formed problem cannot be solved numerically, e.g. a
/// singular basis or a pivoting loop that fails to certify optimality.
/// The CLI maps this to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace crk

#endif  // CRK_ERRORS_HPP
