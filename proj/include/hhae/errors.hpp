#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hhae {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define HHAE_DEFINE_ERROR(Name)        \
  class Name : public Error {          \
   public:                             \
    using Error::Error;                \
  }

HHAE_DEFINE_ERROR(ShapeMismatch);
HHAE_DEFINE_ERROR(DegenerateDirection);
HHAE_DEFINE_ERROR(SchemaError);
HHAE_DEFINE_ERROR(UnknownFamily);
HHAE_DEFINE_ERROR(OutOfRange);
HHAE_DEFINE_ERROR(BadConfig);
HHAE_DEFINE_ERROR(EmptyDataset);
HHAE_DEFINE_ERROR(CorruptCheckpoint);
HHAE_DEFINE_ERROR(VersionMismatch);
HHAE_DEFINE_ERROR(LengthMismatch);
HHAE_DEFINE_ERROR(EmptyInput);
HHAE_DEFINE_ERROR(TooFewPairs);
HHAE_DEFINE_ERROR(TooFew);
HHAE_DEFINE_ERROR(NeedTwoClusters);
HHAE_DEFINE_ERROR(UnknownCluster);
HHAE_DEFINE_ERROR(SingleClass);
HHAE_DEFINE_ERROR(UnknownClass);

#undef HHAE_DEFINE_ERROR

/// Malformed recording file; `line` is 1-based.
class FormatError : public Error {
 public:
  FormatError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace hhae
