#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace gradet {

#ifdef GRADET_USE_DOUBLE
using Real = double;
#else
using Real = float;
#endif

using TokenId = std::int32_t;
using Index = std::int64_t;

/// Malformed input data: files, manifests, checkpoints. The CLI maps it to exit code 3.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid command-line usage. The CLI maps it to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gradet
