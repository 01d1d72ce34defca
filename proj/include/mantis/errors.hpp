#pragma once

#include <stdexcept>
#include <string>

namespace mantis {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class SizeError : public Error { using Error::Error; };
class IndexError : public Error { using Error::Error; };
class ArgumentError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class GenerationError : public Error { using Error::Error; };
class ParseError : public Error { using Error::Error; };
class CorruptionError : public Error { using Error::Error; };
class LookupError : public Error { using Error::Error; };
class DegenerateLabelError : public Error { using Error::Error; };

// Non-finite value detected; carries the layer where it surfaced (-1 if n/a).
class NumericError : public Error {
 public:
  NumericError(const std::string& what, int layer = -1)
      : Error(what), layer_(layer) {}
  int layer() const noexcept { return layer_; }

 private:
  int layer_;
};

}  // namespace mantis
