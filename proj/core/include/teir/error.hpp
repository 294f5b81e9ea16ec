#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace teir {

// Base class for every error raised by the library. The CLI maps the
// category onto its exit code.
class Error : public std::runtime_error {
 public:
  enum class Category { kUsage, kRuntime, kIo };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const { return category_; }

 private:
  Category category_;
};

class InvalidInput : public Error {
 public:
  explicit InvalidInput(const std::string& what)
      : Error(Category::kUsage, "invalid input: " + what) {}
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : Error(Category::kUsage, "config error [" + key + "]: " + what),
        key_(key), detail_(what) {}
  const std::string& key() const { return key_; }
  const std::string& detail() const { return detail_; }

 private:
  std::string key_;
  std::string detail_;
};

class InvalidId : public Error {
 public:
  explicit InvalidId(std::uint64_t id, const std::string& context = "")
      : Error(Category::kRuntime,
              "invalid id " + std::to_string(id) +
                  (context.empty() ? "" : " (" + context + ")")),
        id_(id) {}
  std::uint64_t id() const { return id_; }

 private:
  std::uint64_t id_;
};

class StateError : public Error {
 public:
  explicit StateError(const std::string& what)
      : Error(Category::kRuntime, "state error: " + what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what)
      : Error(Category::kRuntime, "numeric error: " + what) {}
};

class DegenerateFeature : public Error {
 public:
  DegenerateFeature(std::size_t row, const std::string& what)
      : Error(Category::kRuntime, "degenerate feature at row " +
                                      std::to_string(row) + ": " + what),
        row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

class UndefinedMetric : public Error {
 public:
  explicit UndefinedMetric(const std::string& what)
      : Error(Category::kRuntime, "undefined metric: " + what) {}
};

class ConsistencyError : public Error {
 public:
  explicit ConsistencyError(const std::string& what)
      : Error(Category::kRuntime, "internal consistency: " + what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what)
      : Error(Category::kIo, "io error: " + what) {}
};

// Binary or text file whose content does not match the expected layout.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what)
      : Error(Category::kIo, "format error: " + what) {}
};

class TruncatedFile : public Error {
 public:
  explicit TruncatedFile(const std::string& what)
      : Error(Category::kIo, "truncated file: " + what) {}
};

class DimensionMismatch : public Error {
 public:
  explicit DimensionMismatch(const std::string& what)
      : Error(Category::kIo, "dimension mismatch: " + what) {}
};

// Malformed line in a dataset or manifest; carries a 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(Category::kIo, file + ":" + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Dataset row pointing at an image that does not exist.
class DanglingReference : public Error {
 public:
  DanglingReference(const std::string& file, std::size_t line, const std::string& what)
      : Error(Category::kIo, file + ":" + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace teir
