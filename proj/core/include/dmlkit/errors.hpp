#pragma once

#include <stdexcept>
#include <string>

namespace dmlkit {

// Error taxonomy mirrors the CLI exit codes: config problems (bad flags,
// malformed schema JSON, contradictory options), data problems (malformed
// CSV, contract violations in the loaded columns), and numerical failures
// (non-convergence, violated internal identities).
class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class data_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class numeric_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dmlkit
