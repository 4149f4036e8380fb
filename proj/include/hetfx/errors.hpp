#pragma once

#include <stdexcept>
#include <string>

namespace hetfx {

// Raised for malformed input data, schema problems, rank deficiency and
// invalid configuration. The CLI maps this to exit code 2.
class DataError : public std::runtime_error {
public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when an estimator cannot produce a usable result (divergent IRLS,
// singular weighted cross-product, optimizer failure). CLI exit code 3.
class FitError : public std::runtime_error {
public:
  explicit FitError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace hetfx
