#pragma once

#include <stdexcept>
#include <string>

namespace t4c {

/// Input or configuration that violates a documented contract. Maps to CLI exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure while running an otherwise valid job (I/O, divergence). Maps to CLI exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SchemaError : public ValidationError {
 public:
  SchemaError(std::string file, std::size_t line, std::string field, const std::string& what)
      : ValidationError(file + ":" + std::to_string(line) + ": field '" + field + "': " + what),
        file_(std::move(file)),
        line_(line),
        field_(std::move(field)) {}

  const std::string& file() const { return file_; }
  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::string file_;
  std::size_t line_;
  std::string field_;
};

class DanglingReferenceError : public ValidationError {
 public:
  DanglingReferenceError(const std::string& where, const std::string& kind, std::string id)
      : ValidationError(where + ": unknown " + kind + " \"" + id + "\""), id_(std::move(id)) {}

  const std::string& id() const { return id_; }

 private:
  std::string id_;
};

class MissingFileError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

}  // namespace t4c
