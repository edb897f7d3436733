#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace embproc {

// Base for every error raised by the library. The CLI maps UsageError to
// exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Bad magic, unsupported version, malformed text line.
class FormatError : public Error {
 public:
  using Error::Error;
};

// File ends in the middle of a record.
class CorruptionError : public Error {
 public:
  CorruptionError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

// Values that are well-formed on disk but violate a data invariant
// (non-finite floats, dimension mismatches, duplicates, empty inputs).
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace embproc
