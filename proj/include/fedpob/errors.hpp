#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedpob {

// Root of every error the library throws.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NotPositiveDefinite : Error {
  using Error::Error;
};

struct DimensionMismatch : Error {
  using Error::Error;
};

struct EmptyArmSpace : Error {
  using Error::Error;
};

struct UnknownArm : Error {
  using Error::Error;
};

struct InsufficientArms : Error {
  using Error::Error;
};

struct DuplicateArmId : Error {
  using Error::Error;
};

struct NonFiniteIterate : Error {
  using Error::Error;
};

struct MissingUpload : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct TransportError : Error {
  using Error::Error;
};

// Row/column are 1-based line numbers and 0-based column indices; either may
// be unset (npos) when the error is not tied to a cell.
struct ParseError : Error {
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  ParseError(const std::string& what, std::size_t row = npos, std::size_t column = npos)
      : Error(format(what, row, column)), row(row), column(column) {}

  std::size_t row;
  std::size_t column;

 private:
  static std::string format(const std::string& what, std::size_t row, std::size_t column) {
    std::string out = what;
    if (row != npos) out += " (row " + std::to_string(row);
    if (column != npos) out += (row != npos ? ", column " : " (column ") + std::to_string(column);
    if (row != npos || column != npos) out += ")";
    return out;
  }
};

struct MalformedFrame : Error {
  MalformedFrame(const std::string& what, std::size_t offset)
      : Error(what + " at byte offset " + std::to_string(offset)), offset(offset) {}

  std::size_t offset;
};

}  // namespace fedpob
