#pragma once

// Synthetic trace corpora drawn from first-order family profiles.
//
// Profile JSON:
//   {"profiles": [{"name": "...", "label": "benign"|"malicious", "weight": 1.0,
//                  "length_range": [min, max], "start": [...|φ| reals...],
//                  "transition": [[...|φ| reals...], ...]}]}
// A bare top-level array of profile objects is accepted too.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "servicemonitor/catalog.hpp"
#include "servicemonitor/error.hpp"
#include "servicemonitor/label.hpp"
#include "servicemonitor/matrix.hpp"
#include "servicemonitor/parallel.hpp"
#include "servicemonitor/rng.hpp"
#include "servicemonitor/trace.hpp"

namespace servicemonitor {

struct FamilyProfile {
  std::string name;
  Label label = Label::kBenign;
  std::vector<double> start_distribution;
  RowMatrix transition;
  std::size_t min_len = 2;
  std::size_t max_len = 2;
  double weight = 1.0;
};

inline constexpr double kStochasticTolerance = 1e-9;

inline void validate_profile(const FamilyProfile& p, std::size_t state_count) {
  const auto where = "profile '" + p.name + "': ";
  if (p.start_distribution.size() != state_count ||
      static_cast<std::size_t>(p.transition.rows()) != state_count ||
      static_cast<std::size_t>(p.transition.cols()) != state_count) {
    throw Error(ErrorKind::kShape, where + "dimensions do not match the " + std::to_string(state_count) +
                                       "-function catalog");
  }
  if (p.min_len < 2 || p.min_len > p.max_len) throw Error(ErrorKind::kProfile, where + "need 2 <= min_len <= max_len");
  if (!(p.weight > 0.0) || !std::isfinite(p.weight)) throw Error(ErrorKind::kProfile, where + "weight must be positive");
  auto check = [&](auto&& values, const std::string& what) {
    double sum = 0.0;
    for (double v : values) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorKind::kProfile, where + what + " has a negative or non-finite entry");
      sum += v;
    }
    if (sum == 0.0) throw Error(ErrorKind::kProfile, where + what + " is all zeros");
    if (std::abs(sum - 1.0) > kStochasticTolerance) {
      throw Error(ErrorKind::kProfile, where + what + " sums to " + std::to_string(sum) + ", not 1");
    }
  };
  check(p.start_distribution, "start distribution");
  for (Eigen::Index r = 0; r < p.transition.rows(); ++r) {
    const Vector row = p.transition.row(r).transpose();
    check(std::span<const double>(row.data(), row.size()), "transition row " + std::to_string(r));
  }
}

namespace detail {

inline std::size_t sample_categorical(std::span<const double> probs, Xoshiro256& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last_positive = i;
    cum += probs[i];
    if (u < cum) return i;
  }
  return last_positive;
}

}  // namespace detail

/// Chain states drawn from the profile, emitted as BC_TRANSACTION records.
inline std::vector<FunctionId> sample_states(const FamilyProfile& profile, std::size_t state_count, std::uint64_t seed) {
  validate_profile(profile, state_count);
  Xoshiro256 rng(seed);
  const std::size_t length = profile.min_len + rng.below(profile.max_len - profile.min_len + 1);
  std::vector<FunctionId> states;
  states.reserve(length);
  std::size_t at = detail::sample_categorical(profile.start_distribution, rng);
  states.push_back(static_cast<FunctionId>(at));
  while (states.size() < length) {
    const Vector row = profile.transition.row(static_cast<Eigen::Index>(at)).transpose();
    at = detail::sample_categorical(std::span<const double>(row.data(), row.size()), rng);
    states.push_back(static_cast<FunctionId>(at));
  }
  return states;
}

inline std::vector<TransactionRecord> sample_trace(const FamilyProfile& profile, const ServiceCatalog& catalog,
                                                   std::uint64_t seed) {
  const auto states = sample_states(profile, catalog.size(), seed);
  Xoshiro256 rng(derive_seed(seed, "stamps", 0));
  const auto pid = static_cast<std::uint32_t>(1000 + rng.below(30000));
  std::uint64_t t = 1'000'000 + rng.below(1'000'000);
  std::vector<TransactionRecord> records;
  records.reserve(states.size());
  for (auto s : states) {
    const auto& f = catalog[s];
    records.push_back(TransactionRecord{t, pid, kBcTransaction, f.interface_token, f.function_code});
    t += 1 + rng.below(20'000);
  }
  return records;
}

struct GeneratedTrace {
  std::string app_id;
  std::string profile;
  Label label = Label::kBenign;
  std::vector<TransactionRecord> records;
};

namespace detail {
inline std::string app_id_for(const std::string& profile, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "-%06zu", index);
  return profile + buf;
}
}  // namespace detail

/// `count` traces; each picks a profile with probability proportional to its weight.
inline std::vector<GeneratedTrace> gen_corpus(std::span<const FamilyProfile> profiles, const ServiceCatalog& catalog,
                                              std::size_t count, std::uint64_t seed) {
  if (profiles.empty()) throw Error(ErrorKind::kConfig, "no profiles given");
  std::vector<double> weights;
  double total = 0.0;
  for (const auto& p : profiles) {
    validate_profile(p, catalog.size());
    weights.push_back(p.weight);
    total += p.weight;
  }
  for (auto& w : weights) w /= total;
  std::vector<GeneratedTrace> out(count);
  parallel_for(count, [&](std::size_t i) {
    Xoshiro256 pick(derive_seed(seed, "pick", i));
    const auto& p = profiles[detail::sample_categorical(weights, pick)];
    out[i] = GeneratedTrace{detail::app_id_for(p.name, i), p.name, p.label,
                            sample_trace(p, catalog, derive_seed(seed, "trace", i))};
  });
  return out;
}

/// Exactly `per_profile` traces from each profile, in profile order.
inline std::vector<GeneratedTrace> gen_per_profile(std::span<const FamilyProfile> profiles,
                                                   const ServiceCatalog& catalog, std::size_t per_profile,
                                                   std::uint64_t seed) {
  if (profiles.empty()) throw Error(ErrorKind::kConfig, "no profiles given");
  for (const auto& p : profiles) validate_profile(p, catalog.size());
  std::vector<GeneratedTrace> out(profiles.size() * per_profile);
  parallel_for(out.size(), [&](std::size_t i) {
    const auto& p = profiles[i / per_profile];
    out[i] = GeneratedTrace{detail::app_id_for(p.name, i % per_profile), p.name, p.label,
                            sample_trace(p, catalog, derive_seed(seed, "trace", i))};
  });
  return out;
}

// --- JSON -------------------------------------------------------------------

inline nlohmann::ordered_json profile_to_json(const FamilyProfile& p) {
  nlohmann::ordered_json j;
  j["name"] = p.name;
  j["label"] = std::string(to_string(p.label));
  j["weight"] = p.weight;
  j["length_range"] = {p.min_len, p.max_len};
  j["start"] = p.start_distribution;
  auto rows = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < p.transition.rows(); ++r) {
    rows.push_back(std::vector<double>(p.transition.row(r).begin(), p.transition.row(r).end()));
  }
  j["transition"] = std::move(rows);
  return j;
}

inline std::string profiles_to_json(std::span<const FamilyProfile> profiles) {
  nlohmann::ordered_json doc;
  doc["profiles"] = nlohmann::ordered_json::array();
  for (const auto& p : profiles) doc["profiles"].push_back(profile_to_json(p));
  return doc.dump(1) + "\n";
}

inline std::vector<FamilyProfile> profiles_from_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kFormat, std::string("profile document: ") + e.what());
  }
  const nlohmann::json& list = doc.is_object() && doc.contains("profiles") ? doc["profiles"] : doc;
  if (!list.is_array()) throw Error(ErrorKind::kFormat, "profile document must hold an array of profiles");
  std::vector<FamilyProfile> out;
  for (const auto& j : list) {
    try {
      FamilyProfile p;
      p.name = j.at("name").get<std::string>();
      auto label = label_from_string(j.at("label").get<std::string>());
      if (!label) throw Error(ErrorKind::kProfile, "profile '" + p.name + "': unknown label");
      p.label = *label;
      p.weight = j.value("weight", 1.0);
      const auto range = j.at("length_range").get<std::vector<std::size_t>>();
      if (range.size() != 2) throw Error(ErrorKind::kProfile, "profile '" + p.name + "': length_range needs 2 values");
      p.min_len = range[0];
      p.max_len = range[1];
      p.start_distribution = j.at("start").get<std::vector<double>>();
      const auto rows = j.at("transition").get<std::vector<std::vector<double>>>();
      p.transition.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows.size()) throw Error(ErrorKind::kShape, "profile '" + p.name + "': transition is not square");
        for (std::size_t c = 0; c < rows.size(); ++c) {
          p.transition(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        }
      }
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kFormat, std::string("profile document: ") + e.what());
    }
  }
  return out;
}

// --- shipped defaults -------------------------------------------------------

namespace detail {

struct ProfileSketch {
  std::string name;
  Label label;
  std::size_t min_len, max_len;
  std::vector<std::pair<std::string_view, double>> start;
  /// Ordered routine: each function's most likely successor is the next entry (wrapping).
  std::vector<std::string_view> routine;
  /// Relative weight of each routine function as a non-routine successor (default 1).
  std::map<std::string_view, double> emphasis;
};

inline constexpr double kRoutineMass = 0.5;

inline FamilyProfile realize(const ProfileSketch& s, const ServiceCatalog& catalog) {
  const std::size_t n = catalog.size();
  auto id = [&](std::string_view name) -> std::size_t {
    auto f = catalog.find_by_name(name);
    if (!f) throw Error(ErrorKind::kProfile, "default profile names unknown function " + std::string(name));
    return *f;
  };
  FamilyProfile p;
  p.name = s.name;
  p.label = s.label;
  p.min_len = s.min_len;
  p.max_len = s.max_len;
  p.start_distribution.assign(n, 0.0);
  double start_total = 0.0;
  for (const auto& [name, w] : s.start) start_total += w;
  for (const auto& [name, w] : s.start) p.start_distribution[id(name)] += w / start_total;

  std::vector<std::size_t> routine;
  std::vector<double> emphasis;
  for (auto name : s.routine) {
    routine.push_back(id(name));
    auto it = s.emphasis.find(name);
    emphasis.push_back(it == s.emphasis.end() ? 1.0 : it->second);
  }
  p.transition = RowMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  std::vector<bool> in_routine(n, false);
  for (auto r : routine) in_routine[r] = true;
  for (std::size_t from = 0; from < n; ++from) {
    auto row = p.transition.row(static_cast<Eigen::Index>(from));
    // Non-routine background mass spread by emphasis; never a self-transition.
    double total = 0.0;
    for (std::size_t i = 0; i < routine.size(); ++i) {
      if (routine[i] != from) total += emphasis[i];
    }
    const double spread = in_routine[from] ? 1.0 - kRoutineMass : 1.0;
    for (std::size_t i = 0; i < routine.size(); ++i) {
      if (routine[i] != from) row(static_cast<Eigen::Index>(routine[i])) += spread * emphasis[i] / total;
    }
    if (in_routine[from]) {
      const auto pos = static_cast<std::size_t>(std::find(routine.begin(), routine.end(), from) - routine.begin());
      row(static_cast<Eigen::Index>(routine[(pos + 1) % routine.size()])) += kRoutineMass;
    }
    row /= row.sum();
  }
  return p;
}

}  // namespace detail

/// The two shipped families: a benign foreground app (short traces, activity
/// lifecycle and package queries) and a telephony malware family (longer
/// traces, subscriber-info getters and premium SMS).
inline std::vector<FamilyProfile> default_profiles(const ServiceCatalog& catalog = default_catalog()) {
  detail::ProfileSketch benign{
      "benign-app",
      Label::kBenign,
      5,
      20,
      {{"startActivity", 0.6}, {"getService", 0.3}, {"getApplicationInfo", 0.1}},
      {"startActivity", "activityResumed", "getPackageInfo", "getApplicationInfo", "registerReceiver",
       "getActiveNetworkInfo", "isInteractive", "acquireWakeLock", "getContentProvider", "queryIntentActivities",
       "getActivityInfo", "hasSystemFeature", "getRequestedOrientation", "setRequestedOrientation", "activityPaused",
       "releaseWakeLock", "unregisterReceiver", "removeContentProvider", "activityIdle", "getConnectionInfo",
       "getNetworkType", "getService", "finishActivity"},
      {{"getService", 2.0}, {"activityResumed", 2.0}, {"activityPaused", 2.0}, {"getPackageInfo", 1.5},
       {"getNetworkType", 0.3}, {"getConnectionInfo", 0.5}},
  };
  detail::ProfileSketch malware{
      "telephony-malware",
      Label::kMalicious,
      20,
      60,
      {{"getService", 0.5}, {"startService", 0.3}, {"startActivity", 0.2}},
      {"getService", "getDeviceId", "getSubscriberId", "getLine1Number", "getIccSerialNumber", "getNetworkType",
       "getActivePhoneType", "sendText", "getInstalledPackages", "getRunningAppProcesses", "startService",
       "registerReceiver", "listen", "getAllNetworkInfo", "getLastLocation", "requestLocationUpdates",
       "getBestProvider", "getMemoryInfo", "broadcastIntent", "sendMultipartText", "acquireWakeLock",
       "killBackgroundProcesses", "getDeviceSvn", "startActivity", "activityResumed", "getPackageInfo",
       "activityPaused"},
      {{"getDeviceId", 3.0}, {"getSubscriberId", 3.0}, {"getLine1Number", 2.0}, {"sendText", 3.0},
       {"getInstalledPackages", 2.0}, {"getService", 2.0}},
  };
  return {detail::realize(benign, catalog), detail::realize(malware, catalog)};
}

}  // namespace servicemonitor
