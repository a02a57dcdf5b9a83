#pragma once

#include <stdexcept>
#include <string>

namespace tempo {

// Error taxonomy shared by the library and the CLI.  The CLI maps each
// category to a distinct process exit code (see exit_code_for).
struct ConfigError : std::runtime_error {  // invalid options / flag combinations
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {  // unreadable or inconsistent inputs
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {  // NaN/Inf or diverged computation
  using std::runtime_error::runtime_error;
};

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  return 1;
}

}  // namespace tempo
