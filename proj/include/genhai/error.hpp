#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace genhai {

/// Argument outside an operation's mathematical domain (support violations,
/// dimension mismatches, non-finite inputs).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A caller broke a structural contract, e.g. a conditioning vector was
/// requested without a field its sub-program needs.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Truncated sampling asked for a region with (numerically) no mass.
class TailExhaustedError : public DomainError {
 public:
  using DomainError::DomainError;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Model artifact could not be loaded (bad version, missing sub-program,
/// violated invariant).
class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace genhai
