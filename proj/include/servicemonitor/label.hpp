#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

namespace servicemonitor {

/// Class index doubles as the vote index: benign = 0, malicious = 1.
/// Malicious is the positive class everywhere.
enum class Label : std::uint8_t { kBenign = 0, kMalicious = 1 };

inline std::string_view to_string(Label l) { return l == Label::kMalicious ? "malicious" : "benign"; }

inline std::optional<Label> label_from_string(std::string_view s) {
  if (s == "benign") return Label::kBenign;
  if (s == "malicious") return Label::kMalicious;
  return std::nullopt;
}

}  // namespace servicemonitor
