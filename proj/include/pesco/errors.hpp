#pragma once

#include <stdexcept>
#include <string>

namespace pesco {

// Base of all library errors. Two broad families matter to callers:
// DataError (malformed input, bad files, protocol trouble) and
// NumericError (degenerate or non-finite numerics mid-computation).
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class DataError : public Error {
public:
  using Error::Error;
};

class NumericError : public Error {
public:
  using Error::Error;
};

// corpus
class EmptyDocumentError : public DataError {
public:
  using DataError::DataError;
};
class MalformedTemplateError : public DataError {
public:
  using DataError::DataError;
};

// encoder
class DegenerateEmbeddingError : public NumericError {
public:
  using NumericError::NumericError;
};
class NonFiniteGradientError : public NumericError {
public:
  using NumericError::NumericError;
};
class DimensionMismatchError : public DataError {
public:
  using DataError::DataError;
};

// remote encoder
class RemoteEncoderUnavailableError : public DataError {
public:
  using DataError::DataError;
};
class ProtocolViolationError : public DataError {
public:
  using DataError::DataError;
};

// io
class ParseError : public DataError {
public:
  ParseError(const std::string& msg, std::size_t line)
      : DataError("line " + std::to_string(line) + ": " + msg), line_(line) {}
  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};
class LabelRangeError : public DataError {
public:
  using DataError::DataError;
};
class IncompatibleCheckpointError : public DataError {
public:
  using DataError::DataError;
};
class CorruptCheckpointError : public DataError {
public:
  using DataError::DataError;
};
class UnknownKeyError : public DataError {
public:
  using DataError::DataError;
};
class ConfigTypeError : public DataError {
public:
  using DataError::DataError;
};
class ConfigError : public DataError {
public:
  using DataError::DataError;
};

// selftrain / evalreport
class EmptyPoolError : public DataError {
public:
  using DataError::DataError;
};
class ShapeError : public DataError {
public:
  using DataError::DataError;
};

}  // namespace pesco
