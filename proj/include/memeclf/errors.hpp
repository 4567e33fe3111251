#pragma once

#include <stdexcept>
#include <string>

namespace memeclf {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes disagree, or a tensor does not match its declared shape.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Out-of-range scalar argument (dropout rate, epsilon, batch size, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data: manifest rows, labels, vote lists.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class VocabularyError : public Error {
 public:
  using Error::Error;
};

class ImageError : public Error {
 public:
  using Error::Error;
};

class OcrError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace memeclf
