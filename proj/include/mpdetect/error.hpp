#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mpdetect
{

/// Base for every error raised by the library. Errors caused by bad input data
/// derive from DataError; the CLI maps those to exit code 2.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

class DataError : public Error
{
public:
  using Error::Error;
};

/// Structural problem in an input file (wrong header, wrong column count).
class FormatError : public DataError
{
public:
  FormatError(std::size_t line, const std::string& what)
    : DataError("line " + std::to_string(line) + ": " + what), line_(line)
  {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

/// A field that should be numeric could not be parsed.
class ParseError : public DataError
{
public:
  ParseError(std::size_t line, const std::string& what)
    : DataError("line " + std::to_string(line) + ": " + what), line_(line)
  {}
  explicit ParseError(const std::string& what) : DataError(what), line_(0) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

class DuplicateError : public DataError
{
public:
  using DataError::DataError;
};

class ValidationError : public DataError
{
public:
  using DataError::DataError;
};

class IncompleteRecordError : public DataError
{
public:
  using DataError::DataError;
};

class MissingAlmanacError : public DataError
{
public:
  using DataError::DataError;
};

class EmptyCalibrationError : public DataError
{
public:
  using DataError::DataError;
};

class InvalidCurveError : public DataError
{
public:
  using DataError::DataError;
};

class GeometryError : public DataError
{
public:
  using DataError::DataError;
};

class JoinError : public DataError
{
public:
  using DataError::DataError;
};

class NumericalError : public Error
{
public:
  using Error::Error;
};

} // namespace mpdetect
