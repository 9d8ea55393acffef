#pragma once

#include <stdexcept>
#include <string>

namespace topical {

// Bad user input: malformed files, missing paths, inconsistent options.
// The CLI maps it to exit code 2; everything else is a runtime failure.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace topical
