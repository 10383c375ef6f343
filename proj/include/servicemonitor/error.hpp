#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace servicemonitor {

enum class ErrorKind {
  kParse,
  kDuplicate,
  kFormat,
  kTruncation,
  kBounds,
  kResolution,
  kDomain,
  kShape,
  kLabel,
  kBinding,
  kInsufficientData,
  kTraining,
  kMetric,
  kStratification,
  kProfile,
  kConfig,
  kVersion,
  kChecksum,
  kConsistency,
  kIo,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kDuplicate: return "duplication error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kTruncation: return "truncation error";
    case ErrorKind::kBounds: return "bounds error";
    case ErrorKind::kResolution: return "resolution error";
    case ErrorKind::kDomain: return "domain error";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kLabel: return "label error";
    case ErrorKind::kBinding: return "binding error";
    case ErrorKind::kInsufficientData: return "insufficient-data error";
    case ErrorKind::kTraining: return "training error";
    case ErrorKind::kMetric: return "metric error";
    case ErrorKind::kStratification: return "stratification error";
    case ErrorKind::kProfile: return "profile error";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kVersion: return "version error";
    case ErrorKind::kChecksum: return "checksum error";
    case ErrorKind::kConsistency: return "consistency error";
    case ErrorKind::kIo: return "i/o error";
  }
  return "error";
}

/// Every failure raised by the library. `kind()` lets callers (the CLI in
/// particular) map failures to exit codes without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Format-level failure that knows where in the byte stream it happened.
class OffsetError : public Error {
 public:
  OffsetError(ErrorKind kind, std::uint64_t offset, const std::string& message)
      : Error(kind, message + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Line-oriented text parse failure.
class LineError : public Error {
 public:
  LineError(ErrorKind kind, std::size_t line, const std::string& message)
      : Error(kind, "line " + std::to_string(line) + ": " + message), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace servicemonitor
