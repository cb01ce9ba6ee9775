#ifndef PROMPTCLASS_ERRORS_HPP
#define PROMPTCLASS_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace promptclass {

// Bad flags, malformed config, misuse of an API. CLI maps this to exit 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (datasets, vocab files, checkpoints).
// CLI maps this to exit 2.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite intermediates, degenerate statistics, numeric failures.
// CLI maps this to exit 3.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace promptclass

#endif  // PROMPTCLASS_ERRORS_HPP
