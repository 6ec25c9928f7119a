#pragma once

#include <stdexcept>
#include <string>

namespace elegant {

// Every failure raised by the library derives from Error. The kind decides
// the CLI exit code (see exit_code()).
class Error : public std::runtime_error {
 public:
  enum class Kind {
    Config,     // bad configuration / unknown names
    Shape,      // tensor shape mismatch
    Index,      // attribute index out of range
    Contract,   // violated precondition
    Parse,      // malformed input file
    Dataset,    // empty pools, missing images
    Alignment,  // degenerate landmarks
    Statistics, // too few samples
    Numerics,   // matrix square root residual, NaN
    Divergence, // non-finite training loss
    Load,       // checkpoint load failure
    Io,         // file system
  };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

  // 1 config errors, 2 data errors, 3 runtime/numeric errors.
  int exit_code() const noexcept {
    switch (kind_) {
      case Kind::Config:
        return 1;
      case Kind::Parse:
      case Kind::Dataset:
      case Kind::Alignment:
      case Kind::Load:
      case Kind::Io:
        return 2;
      default:
        return 3;
    }
  }

 private:
  Kind kind_;
};

#define ELEGANT_DEFINE_ERROR(Name, K) \
  struct Name : Error {               \
    explicit Name(const std::string& what) : Error(Kind::K, what) {} \
  };

ELEGANT_DEFINE_ERROR(ConfigError, Config)
ELEGANT_DEFINE_ERROR(ShapeError, Shape)
ELEGANT_DEFINE_ERROR(IndexError, Index)
ELEGANT_DEFINE_ERROR(ContractError, Contract)
ELEGANT_DEFINE_ERROR(ParseError, Parse)
ELEGANT_DEFINE_ERROR(DatasetError, Dataset)
ELEGANT_DEFINE_ERROR(AlignmentError, Alignment)
ELEGANT_DEFINE_ERROR(StatisticsError, Statistics)
ELEGANT_DEFINE_ERROR(NumericsError, Numerics)
ELEGANT_DEFINE_ERROR(LoadError, Load)
ELEGANT_DEFINE_ERROR(IoError, Io)

#undef ELEGANT_DEFINE_ERROR

// Non-finite loss during training; carries the offending loss term.
struct DivergenceError : Error {
  DivergenceError(const std::string& term, double value)
      : Error(Kind::Divergence, "training diverged: " + term + " = " + std::to_string(value)),
        term(term) {}
  std::string term;
};

}  // namespace elegant
