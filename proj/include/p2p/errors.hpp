// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace p2p {

/// Shapes or widths that do not line up.
class DimensionError : public std::invalid_argument {
 public:
  explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

/// Argument outside the mathematical domain of an operation (log of a non-positive value, ...).
class DomainError : public std::domain_error {
 public:
  explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

/// NaN or Inf where a finite value is required.
class NonFiniteError : public std::runtime_error {
 public:
  explicit NonFiniteError(const std::string& what) : std::runtime_error(what) {}
};

/// Misuse of the differentiation record (backward without a tape, non-scalar loss).
class TapeError : public std::logic_error {
 public:
  explicit TapeError(const std::string& what) : std::logic_error(what) {}
};

/// Malformed file or config text.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// Contract violations between components (wrong rollout path, bad config combination).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

}  // namespace p2p
