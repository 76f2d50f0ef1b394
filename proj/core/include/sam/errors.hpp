#pragma once

#include <stdexcept>
#include <string>

namespace sam {

/// Caller supplied arguments that violate an operation's preconditions.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Tensor or image dimensions disagree with what the operation requires.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file could not be read, parsed, or did not match the expected layout.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A forward pass produced non-finite output.
class RenderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A loss term became non-finite; `term()` names the offending term.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::string term, const std::string& what)
      : std::runtime_error(what), term_(std::move(term)) {}
  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

/// Requested entity (bundle, job, direction) does not exist.
class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A bounded queue rejected work because it is full.
class QueueFullError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sam
