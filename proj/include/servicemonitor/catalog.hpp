#pragma once

// The finite state space of system-service functions. Each cataloged
// (interface token, transaction code) pair is one Markov state; its position
// in the catalog file is its function id.

#include <algorithm>
#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "servicemonitor/digest.hpp"
#include "servicemonitor/error.hpp"

namespace servicemonitor {

enum class Category : std::uint8_t {
  kTelephonyManager,
  kLocationManager,
  kNetworkManager,
  kActivityManager,
  kPackageManager,
  kOsRelated,
};

inline constexpr std::array<std::string_view, 6> kCategoryNames = {
    "TelephonyManager", "LocationManager", "NetworkManager",
    "ActivityManager",  "PackageManager",  "OsRelated",
};

inline std::string_view to_string(Category c) { return kCategoryNames[static_cast<std::size_t>(c)]; }

inline std::optional<Category> category_from_string(std::string_view name) {
  for (std::size_t i = 0; i < kCategoryNames.size(); ++i) {
    if (kCategoryNames[i] == name) return static_cast<Category>(i);
  }
  return std::nullopt;
}

using FunctionId = std::uint32_t;

struct ServiceFunction {
  FunctionId function_id = 0;
  std::string interface_token;
  std::uint32_t function_code = 0;
  std::string function_name;
  Category category = Category::kOsRelated;

  friend bool operator==(const ServiceFunction&, const ServiceFunction&) = default;
};

/// Immutable after construction; share freely across threads.
class ServiceCatalog {
 public:
  /// Builds a catalog from entries in order; ids are reassigned to positions.
  explicit ServiceCatalog(std::vector<ServiceFunction> functions, std::string version = "unversioned")
      : functions_(std::move(functions)), version_(std::move(version)) {
    if (functions_.size() < 2) {
      throw Error(ErrorKind::kParse, "catalog must contain >= 2 functions");
    }
    for (std::size_t i = 0; i < functions_.size(); ++i) {
      auto& f = functions_[i];
      f.function_id = static_cast<FunctionId>(i);
      auto [it, inserted] = index_.emplace(Key{f.interface_token, f.function_code}, f.function_id);
      if (!inserted) {
        throw Error(ErrorKind::kDuplicate, "duplicate catalog entry (" + f.interface_token + ", " +
                                               std::to_string(f.function_code) + ")");
      }
    }
    digest_ = sha256(canonical_text());
  }

  std::size_t size() const noexcept { return functions_.size(); }
  const std::vector<ServiceFunction>& functions() const noexcept { return functions_; }
  const ServiceFunction& operator[](FunctionId id) const { return functions_.at(id); }
  const std::string& version() const noexcept { return version_; }
  const Digest& content_digest() const noexcept { return digest_; }

  std::optional<FunctionId> resolve(std::string_view interface_token,
                                    std::uint32_t function_code) const {
    auto it = index_.find(Key{std::string(interface_token), function_code});
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// First function with this name, optionally restricted to one interface.
  std::optional<FunctionId> find_by_name(std::string_view name,
                                         std::string_view interface_token = {}) const {
    for (const auto& f : functions_) {
      if (f.function_name == name && (interface_token.empty() || f.interface_token == interface_token)) {
        return f.function_id;
      }
    }
    return std::nullopt;
  }

  /// Entry lines in file order, no comments. This is what the digest covers.
  std::string canonical_text() const {
    std::string out;
    for (const auto& f : functions_) {
      out += f.interface_token;
      out += '\t';
      out += std::to_string(f.function_code);
      out += '\t';
      out += f.function_name;
      out += '\t';
      out += to_string(f.category);
      out += '\n';
    }
    return out;
  }

  /// Serialized catalog file, loadable by load_catalog.
  std::string to_file_text() const { return "# version: " + version_ + "\n" + canonical_text(); }

 private:
  using Key = std::pair<std::string, std::uint32_t>;

  std::vector<ServiceFunction> functions_;
  std::string version_;
  Digest digest_{};
  std::map<Key, FunctionId> index_;
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::optional<std::uint32_t> parse_u32(std::string_view s) {
  if (s.empty() || s.size() > 10) return std::nullopt;
  std::uint64_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return std::nullopt;
    v = v * 10 + static_cast<std::uint64_t>(c - '0');
  }
  if (v > 0xFFFFFFFFULL) return std::nullopt;
  return static_cast<std::uint32_t>(v);
}

}  // namespace detail

/// Parses the tab-separated catalog format:
///   interface_token \t function_code \t function_name \t category
/// Lines starting with '#' are comments; `# version: X` sets the version.
/// Blank lines are ignored.
inline ServiceCatalog load_catalog(std::string_view text) {
  std::vector<ServiceFunction> functions;
  std::string version = "unversioned";
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (line.front() == '#') {
      constexpr std::string_view kVersion = "# version:";
      if (line.starts_with(kVersion)) {
        auto v = line.substr(kVersion.size());
        while (!v.empty() && v.front() == ' ') v.remove_prefix(1);
        version = std::string(v);
      }
      continue;
    }
    auto fields = detail::split_tabs(line);
    if (fields.size() != 4) {
      throw LineError(ErrorKind::kParse, line_no,
                      "expected 4 tab-separated fields, found " + std::to_string(fields.size()));
    }
    if (fields[0].empty()) throw LineError(ErrorKind::kParse, line_no, "empty interface token");
    auto code = detail::parse_u32(fields[1]);
    if (!code) {
      throw LineError(ErrorKind::kParse, line_no,
                      "function code '" + std::string(fields[1]) + "' is not a decimal u32");
    }
    if (fields[2].empty()) throw LineError(ErrorKind::kParse, line_no, "empty function name");
    auto category = category_from_string(fields[3]);
    if (!category) {
      throw LineError(ErrorKind::kParse, line_no, "unknown category '" + std::string(fields[3]) + "'");
    }
    for (const auto& f : functions) {
      if (f.interface_token == fields[0] && f.function_code == *code) {
        throw LineError(ErrorKind::kDuplicate, line_no,
                        "duplicate catalog entry (" + std::string(fields[0]) + ", " +
                            std::to_string(*code) + ")");
      }
    }
    functions.push_back(ServiceFunction{static_cast<FunctionId>(functions.size()), std::string(fields[0]),
                                        *code, std::string(fields[2]), *category});
  }
  return ServiceCatalog(std::move(functions), std::move(version));
}

inline ServiceCatalog load_catalog(std::istream& in) {
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_catalog(std::string_view(ss.str()));
}

/// Function names of the example application used throughout the docs.
inline constexpr std::string_view kSubscriberInfoToken = "com.android.internal.telephony.IPhoneSubInfo";
inline constexpr std::string_view kSmsToken = "com.android.internal.telephony.ISms";
inline constexpr std::string_view kLocationToken = "android.location.ILocationManager";

/// The shipped catalog. Codes are numbered sequentially per interface from
/// 1 (FIRST_CALL_TRANSACTION); Android does not publish stable codes.
inline constexpr std::string_view kDefaultCatalogText =
    "# version: servicemonitor-default-1\n"
    "# TelephonyManager\n"
    "com.android.internal.telephony.ISms\t1\tsendText\tTelephonyManager\n"
    "com.android.internal.telephony.ISms\t2\tsendMultipartText\tTelephonyManager\n"
    "com.android.internal.telephony.IPhoneSubInfo\t1\tgetDeviceId\tTelephonyManager\n"
    "com.android.internal.telephony.IPhoneSubInfo\t2\tgetDeviceSvn\tTelephonyManager\n"
    "com.android.internal.telephony.IPhoneSubInfo\t3\tgetSubscriberId\tTelephonyManager\n"
    "com.android.internal.telephony.IPhoneSubInfo\t4\tgetIccSerialNumber\tTelephonyManager\n"
    "com.android.internal.telephony.IPhoneSubInfo\t5\tgetLine1Number\tTelephonyManager\n"
    "com.android.internal.telephony.ITelephony\t1\tgetNetworkType\tTelephonyManager\n"
    "com.android.internal.telephony.ITelephony\t2\tgetActivePhoneType\tTelephonyManager\n"
    "com.android.internal.telephony.ITelephony\t3\tgetCallState\tTelephonyManager\n"
    "com.android.internal.telephony.ITelephonyRegistry\t1\tlisten\tTelephonyManager\n"
    "# LocationManager\n"
    "android.location.ILocationManager\t1\tgetLastLocation\tLocationManager\n"
    "android.location.ILocationManager\t2\trequestLocationUpdates\tLocationManager\n"
    "android.location.ILocationManager\t3\tgetProviders\tLocationManager\n"
    "android.location.ILocationManager\t4\tgetBestProvider\tLocationManager\n"
    "android.location.ILocationManager\t5\tremoveUpdates\tLocationManager\n"
    "# NetworkManager\n"
    "android.net.IConnectivityManager\t1\tgetProxy\tNetworkManager\n"
    "android.net.IConnectivityManager\t2\tgetNetworkInfo\tNetworkManager\n"
    "android.net.IConnectivityManager\t3\tgetActiveNetworkInfo\tNetworkManager\n"
    "android.net.IConnectivityManager\t4\tgetAllNetworkInfo\tNetworkManager\n"
    "android.net.wifi.IWifiManager\t1\tgetConnectionInfo\tNetworkManager\n"
    "android.net.wifi.IWifiManager\t2\tgetWifiEnabledState\tNetworkManager\n"
    "# ActivityManager\n"
    "android.app.IActivityManager\t1\tstartService\tActivityManager\n"
    "android.app.IActivityManager\t2\tstopService\tActivityManager\n"
    "android.app.IActivityManager\t3\tactivityResumed\tActivityManager\n"
    "android.app.IActivityManager\t4\tactivityIdle\tActivityManager\n"
    "android.app.IActivityManager\t5\tgetRunningAppProcesses\tActivityManager\n"
    "android.app.IActivityManager\t6\tcheckPermission\tActivityManager\n"
    "android.app.IActivityManager\t7\tgetMemoryInfo\tActivityManager\n"
    "android.app.IActivityManager\t8\tregisterReceiver\tActivityManager\n"
    "android.app.IActivityManager\t9\tbroadcastIntent\tActivityManager\n"
    "android.app.IActivityManager\t10\tgetContentProvider\tActivityManager\n"
    "android.app.IActivityManager\t11\tremoveContentProvider\tActivityManager\n"
    "android.app.IActivityManager\t12\tstartActivity\tActivityManager\n"
    "android.app.IActivityManager\t13\tactivityPaused\tActivityManager\n"
    "android.app.IActivityManager\t14\tfinishActivity\tActivityManager\n"
    "android.app.IActivityManager\t15\tgetServices\tActivityManager\n"
    "android.app.IActivityManager\t16\tunregisterReceiver\tActivityManager\n"
    "android.app.IActivityManager\t17\tgetRequestedOrientation\tActivityManager\n"
    "android.app.IActivityManager\t18\tsetRequestedOrientation\tActivityManager\n"
    "android.app.IActivityManager\t19\tkillBackgroundProcesses\tActivityManager\n"
    "android.app.IActivityManager\t20\tgetTaskForActivity\tActivityManager\n"
    "android.app.IActivityManager\t21\tgetIntentSender\tActivityManager\n"
    "# PackageManager\n"
    "android.content.pm.IPackageManager\t1\tgetInstalledPackages\tPackageManager\n"
    "android.content.pm.IPackageManager\t2\tgetPackageInfo\tPackageManager\n"
    "android.content.pm.IPackageManager\t3\tgetPackagesForUid\tPackageManager\n"
    "android.content.pm.IPackageManager\t4\tgetApplicationInfo\tPackageManager\n"
    "android.content.pm.IPackageManager\t5\tgetActivityInfo\tPackageManager\n"
    "android.content.pm.IPackageManager\t6\tqueryIntentActivities\tPackageManager\n"
    "android.content.pm.IPackageManager\t7\tcheckPermission\tPackageManager\n"
    "android.content.pm.IPackageManager\t8\thasSystemFeature\tPackageManager\n"
    "# OsRelated\n"
    "android.os.IPowerManager\t1\tisInteractive\tOsRelated\n"
    "android.os.IPowerManager\t2\tacquireWakeLock\tOsRelated\n"
    "android.os.IPowerManager\t3\treleaseWakeLock\tOsRelated\n"
    "android.os.IServiceManager\t1\tgetService\tOsRelated\n"
    "android.os.storage.IMountService\t1\tgetVolumeState\tOsRelated\n"
    "android.os.storage.IMountService\t2\tgetVolumeList\tOsRelated\n";

inline const ServiceCatalog& default_catalog() {
  static const ServiceCatalog catalog = load_catalog(kDefaultCatalogText);
  return catalog;
}

}  // namespace servicemonitor
