#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace rsmtune {

// Base for every recoverable domain failure (bad config, rank deficiency,
// failed evaluation, illegal phase transition). The CLI maps these to exit 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RankDeficientError : public Error {
 public:
  RankDeficientError(const std::string& what, std::vector<std::string> columns)
      : Error(what), columns_(std::move(columns)) {}

  const std::vector<std::string>& columns() const { return columns_; }

 private:
  std::vector<std::string> columns_;
};

class EvaluationError : public Error {
 public:
  EvaluationError(const std::string& what, std::string diagnostics)
      : Error(what), diagnostics_(std::move(diagnostics)) {}

  const std::string& diagnostics() const { return diagnostics_; }

 private:
  std::string diagnostics_;
};

}  // namespace rsmtune
