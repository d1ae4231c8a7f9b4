#pragma once

#include <stdexcept>
#include <string>

namespace clspool {

// Every module reports failures through one of these; the CLI maps them to exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };
struct EvaluationError : Error { using Error::Error; };
struct InputError : Error { using Error::Error; };
struct VocabularyError : InputError { using InputError::InputError; };
struct SliceError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct TrainingError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct UnsupportedVersionError : FormatError { using FormatError::FormatError; };
struct SchemaError : FormatError { using FormatError::FormatError; };
struct ChecksumError : FormatError { using FormatError::FormatError; };
struct MetricError : Error { using Error::Error; };

}  // namespace clspool
