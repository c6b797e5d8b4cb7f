#pragma once

#include <stdexcept>
#include <string>

namespace fracgan {

/// Base for every error the library raises. `code()` is a short stable token
/// the CLI prints so scripts can branch on the failure class.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error("config", message) {}
};

class IngestError : public Error {
 public:
  explicit IngestError(const std::string& message) : Error("ingest", message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io", message) {}
};

class StateError : public Error {
 public:
  explicit StateError(const std::string& message) : Error("state", message) {}
};

class ProvenanceError : public Error {
 public:
  explicit ProvenanceError(const std::string& message)
      : Error("provenance", message) {}
};

}  // namespace fracgan
