#pragma once

#include <stdexcept>
#include <string>

namespace idea {

// Caller broke a documented precondition (bad shape, bad argument).
struct ContractViolation : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A quantity that must stay finite did not. `term()` names the offending
// expression so failures in composite objectives can be attributed.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& term)
      : std::runtime_error("non-finite value in term '" + term + "'"), term_(term) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

// A generated system failed one of its validity checks.
struct AssumptionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad config file or bad command-line usage.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Missing or malformed input file.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace idea
