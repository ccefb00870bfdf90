#pragma once

#include <stdexcept>
#include <string>

namespace pearnet {

// Precondition or shape violation. The CLI maps these to exit code 2 when they
// surface during config validation and 3 when raised mid-run.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed dataset file; carries the 1-based row (or record) index.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, long row)
      : std::runtime_error(what + " (row " + std::to_string(row) + ")"), row_(row) {}
  long row() const { return row_; }

 private:
  long row_;
};

// A node whose feature vector has (near-)zero spread; strict-mode Pearson only.
class DegenerateNodeError : public std::runtime_error {
 public:
  DegenerateNodeError(const std::string& what, int node)
      : std::runtime_error(what + " (node " + std::to_string(node) + ")"), node_(node) {}
  int node() const { return node_; }

 private:
  int node_;
};

// Correlation matrix determinant below the floor; strict-mode VIF only.
class NearSingularError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss during training; names the optimizer step that produced it.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, long step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

// Invalid run configuration; carries the offending key path.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& key_path, const std::string& what)
      : std::runtime_error(key_path + ": " + what), key_path_(key_path) {}
  const std::string& key_path() const { return key_path_; }

 private:
  std::string key_path_;
};

}  // namespace pearnet
