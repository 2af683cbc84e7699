#pragma once

#include <stdexcept>
#include <string>

namespace drex {

// Base class for every failure this library reports.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct ValidationError : Error { using Error::Error; };
struct SpecError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct MissingEmbeddingError : Error { using Error::Error; };
struct CompatibilityError : Error { using Error::Error; };

}  // namespace drex
