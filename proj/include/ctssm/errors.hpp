#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ctssm {

class InvalidArgument : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// The grid [b0, bm] misses so much probability mass that renormalizing
// rows would hide a badly specified model.
class IllConditionedGrid : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class OutOfDomain : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

class NumericError : public std::runtime_error {
public:
  explicit NumericError(const std::string &what, std::ptrdiff_t step = -1)
      : std::runtime_error(what), step_(step) {}
  /// Index of the observation at which the failure surfaced, -1 if unknown.
  std::ptrdiff_t step() const { return step_; }

private:
  std::ptrdiff_t step_;
};

class TooLarge : public std::length_error {
public:
  using std::length_error::length_error;
};

class InvalidStart : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class IngestionError : public std::runtime_error {
public:
  IngestionError(const std::string &what, std::size_t row, std::string column)
      : std::runtime_error("row " + std::to_string(row) + ", column '" + column +
                           "': " + what),
        row_(row), column_(std::move(column)) {}
  std::size_t row() const { return row_; }
  const std::string &column() const { return column_; }

private:
  std::size_t row_;
  std::string column_;
};

} // namespace ctssm
