#ifndef SIVS_ERROR_HPP
#define SIVS_ERROR_HPP

#include <stdexcept>
#include <string>

// Error taxonomy. The CLI maps these onto process exit codes:
//   ConfigError -> 1 (bad usage / bad config)
//   DataError   -> 2 (missing or corrupt files, shape mismatches in data)
//   NumericError-> 3 (non-finite values where finite ones are required)

namespace sivs {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

}  // namespace sivs

#endif
