#pragma once

// Recorded Binder transaction logs.
//
// SMTR layout (little-endian):
//   "SMTR" | u16 version (=1) | u32 record count
//   per record: u64 timestamp_us | u32 pid | u32 command | u16 token_len
//               | token bytes (UTF-8) | u32 function_code
//
// A JSONL debug form is accepted on parse when the first byte is '{':
//   {"ts":..,"pid":..,"cmd":..,"iface":"..","code":..} one per line.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "servicemonitor/bytes.hpp"
#include "servicemonitor/catalog.hpp"
#include "servicemonitor/error.hpp"
#include "servicemonitor/label.hpp"

namespace servicemonitor {

/// Binder command value of an outbound request transaction.
inline constexpr std::uint32_t kBcTransaction = 0;

inline constexpr std::uint16_t kTraceFormatVersion = 1;
inline constexpr std::size_t kMaxTokenBytes = 4096;
inline constexpr std::string_view kTraceMagic = "SMTR";

struct TransactionRecord {
  std::uint64_t timestamp_us = 0;
  std::uint32_t pid = 0;
  std::uint32_t command = kBcTransaction;
  std::string interface_token;
  std::uint32_t function_code = 0;

  bool is_transaction() const noexcept { return command == kBcTransaction; }

  friend bool operator==(const TransactionRecord&, const TransactionRecord&) = default;
};

/// Chronological sequence of resolved function ids for one application.
struct FunctionTrace {
  std::string app_id;
  std::vector<FunctionId> events;
  std::optional<Label> label;

  friend bool operator==(const FunctionTrace&, const FunctionTrace&) = default;
};

enum class UnknownPolicy { kSkip, kError };

inline std::vector<std::uint8_t> write_trace(std::span<const TransactionRecord> records) {
  bytes::Writer w;
  w.raw(kTraceMagic);
  w.u16(kTraceFormatVersion);
  if (records.size() > 0xFFFFFFFFULL) throw Error(ErrorKind::kBounds, "too many records for SMTR");
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.interface_token.size() > kMaxTokenBytes) {
      throw Error(ErrorKind::kBounds, "interface token of " + std::to_string(r.interface_token.size()) +
                                          " bytes exceeds the " + std::to_string(kMaxTokenBytes) +
                                          "-byte bound");
    }
    w.u64(r.timestamp_us);
    w.u32(r.pid);
    w.u32(r.command);
    w.u16(static_cast<std::uint16_t>(r.interface_token.size()));
    w.raw(r.interface_token);
    w.u32(r.function_code);
  }
  return std::move(w).take();
}

/// JSONL debug encoding; parse_trace accepts it back.
inline std::string write_trace_jsonl(std::span<const TransactionRecord> records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["ts"] = r.timestamp_us;
    j["pid"] = r.pid;
    j["cmd"] = r.command;
    j["iface"] = r.interface_token;
    j["code"] = r.function_code;
    out += j.dump();
    out += '\n';
  }
  return out;
}

namespace detail {

inline std::vector<TransactionRecord> parse_trace_binary(std::span<const std::uint8_t> data) {
  bytes::Reader in(data);
  auto magic = in.text(4);
  if (magic != kTraceMagic) throw OffsetError(ErrorKind::kFormat, 0, "bad magic, expected \"SMTR\"");
  auto version = in.u16();
  if (version != kTraceFormatVersion) {
    throw OffsetError(ErrorKind::kFormat, 4, "unsupported SMTR version " + std::to_string(version));
  }
  const std::uint32_t count = in.u32();
  std::vector<TransactionRecord> records;
  // Each record is at least 22 bytes; never trust the count for reservation.
  records.reserve(std::min<std::size_t>(count, in.remaining() / 22));
  for (std::uint32_t i = 0; i < count; ++i) {
    TransactionRecord r;
    r.timestamp_us = in.u64();
    r.pid = in.u32();
    r.command = in.u32();
    const auto len_offset = in.offset();
    const std::uint16_t len = in.u16();
    if (len > kMaxTokenBytes) {
      throw OffsetError(ErrorKind::kBounds, len_offset,
                        "token_len " + std::to_string(len) + " exceeds the " +
                            std::to_string(kMaxTokenBytes) + "-byte record bound");
    }
    const auto token_offset = in.offset();
    r.interface_token = in.text(len);
    if (!bytes::valid_utf8(r.interface_token)) {
      throw OffsetError(ErrorKind::kFormat, token_offset, "interface token is not valid UTF-8");
    }
    r.function_code = in.u32();
    records.push_back(std::move(r));
  }
  if (!in.done()) {
    throw OffsetError(ErrorKind::kFormat, in.offset(),
                      std::to_string(in.remaining()) + " trailing byte(s) after the declared records");
  }
  return records;
}

template <typename T>
T json_uint(const nlohmann::json& obj, const char* key, std::size_t line_no, std::uint64_t max) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_number_unsigned()) {
    throw LineError(ErrorKind::kFormat, line_no, std::string("missing or non-integer key \"") + key + "\"");
  }
  const auto v = it->get<std::uint64_t>();
  if (v > max) throw LineError(ErrorKind::kBounds, line_no, std::string("\"") + key + "\" out of range");
  return static_cast<T>(v);
}

inline std::vector<TransactionRecord> parse_trace_jsonl(std::string_view text) {
  std::vector<TransactionRecord> records;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw LineError(ErrorKind::kFormat, line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) throw LineError(ErrorKind::kFormat, line_no, "record must be a JSON object");
    TransactionRecord r;
    r.timestamp_us = json_uint<std::uint64_t>(obj, "ts", line_no, UINT64_MAX);
    r.pid = json_uint<std::uint32_t>(obj, "pid", line_no, UINT32_MAX);
    r.command = json_uint<std::uint32_t>(obj, "cmd", line_no, UINT32_MAX);
    r.function_code = json_uint<std::uint32_t>(obj, "code", line_no, UINT32_MAX);
    auto iface = obj.find("iface");
    if (iface == obj.end() || !iface->is_string()) {
      throw LineError(ErrorKind::kFormat, line_no, "missing or non-string key \"iface\"");
    }
    r.interface_token = iface->get<std::string>();
    if (r.interface_token.size() > kMaxTokenBytes) {
      throw LineError(ErrorKind::kBounds, line_no, "interface token exceeds the record bound");
    }
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace detail

/// Decodes SMTR, or JSONL when the first byte is '{'.
inline std::vector<TransactionRecord> parse_trace(std::span<const std::uint8_t> data) {
  if (!data.empty() && data.front() == '{') {
    return detail::parse_trace_jsonl(
        std::string_view(reinterpret_cast<const char*>(data.data()), data.size()));
  }
  return detail::parse_trace_binary(data);
}

/// Keeps BC_TRANSACTION records only and maps each through the catalog,
/// preserving record order.
inline FunctionTrace resolve_events(std::span<const TransactionRecord> records,
                                    const ServiceCatalog& catalog,
                                    UnknownPolicy policy = UnknownPolicy::kSkip,
                                    std::string app_id = {}) {
  FunctionTrace trace;
  trace.app_id = std::move(app_id);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!r.is_transaction()) continue;
    auto id = catalog.resolve(r.interface_token, r.function_code);
    if (id) {
      trace.events.push_back(*id);
    } else if (policy == UnknownPolicy::kError) {
      throw Error(ErrorKind::kResolution, "record " + std::to_string(i) + ": unknown pair (" +
                                              r.interface_token + ", " + std::to_string(r.function_code) +
                                              ")");
    }
  }
  return trace;
}

}  // namespace servicemonitor
