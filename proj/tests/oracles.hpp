#pragma once

// Test-only reference computations. Each one evaluates the defining formula
// directly and shares no code path with the library routine it checks.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "servicemonitor/catalog.hpp"
#include "servicemonitor/label.hpp"
#include "servicemonitor/rng.hpp"

namespace oracle {

/// FV[x][y] = sum over pairs i < j with s_x = F_i, s_y = F_j, x != y, and no
/// h in (i, j) with F_h = s_x, of 1 / (j - i). Enumerates every pair.
inline std::vector<std::vector<double>> fv_by_formula(std::span<const std::uint32_t> events, std::size_t states) {
  std::vector<std::vector<double>> fv(states, std::vector<double>(states, 0.0));
  for (std::size_t x = 0; x < states; ++x) {
    for (std::size_t y = 0; y < states; ++y) {
      if (x == y) continue;
      double sum = 0.0;
      for (std::size_t i = 0; i < events.size(); ++i) {
        for (std::size_t j = i + 1; j < events.size(); ++j) {
          if (events[i] != x || events[j] != y) continue;
          bool source_recurs = false;
          for (std::size_t h = i + 1; h < j; ++h) source_recurs = source_recurs || events[h] == x;
          if (!source_recurs) sum += 1.0 / static_cast<double>(j - i);
        }
      }
      fv[x][y] = sum;
    }
  }
  return fv;
}

/// Exact non-negative rational with 128-bit parts.
struct Fraction {
  __int128 num = 0;
  __int128 den = 1;

  static __int128 gcd(__int128 a, __int128 b) {
    if (a < 0) a = -a;
    while (b != 0) {
      const __int128 t = a % b;
      a = b;
      b = t;
    }
    return a == 0 ? 1 : a;
  }
  Fraction reduced() const {
    const __int128 g = gcd(num, den);
    return {num / g, den / g};
  }
  friend Fraction operator-(const Fraction& a, const Fraction& b) {
    return Fraction{a.num * b.den - b.num * a.den, a.den * b.den}.reduced();
  }
  friend Fraction operator*(const Fraction& a, const Fraction& b) {
    return Fraction{a.num * b.num, a.den * b.den}.reduced();
  }
  friend bool operator<(const Fraction& a, const Fraction& b) { return a.num * b.den < b.num * a.den; }
  friend bool operator==(const Fraction& a, const Fraction& b) { return a.num * b.den == b.num * a.den; }
};

/// Gini impurity 1 - p0^2 - p1^2 as an exact fraction.
inline Fraction gini(std::int64_t c0, std::int64_t c1) {
  const std::int64_t n = c0 + c1;
  return Fraction{static_cast<__int128>(n) * n - static_cast<__int128>(c0) * c0 - static_cast<__int128>(c1) * c1,
                  static_cast<__int128>(n) * n}
      .reduced();
}

struct RootSplit {
  std::size_t feature = 0;
  double threshold = 0.0;
};

/// Exhaustive argmax of the impurity decrease G(S) - |L|/|S| G(L) - |R|/|S| G(R)
/// over every feature and every midpoint between consecutive distinct values.
/// Ties: lower feature, then lower threshold. Only strictly positive decreases
/// with both sides >= min_leaf count.
inline std::optional<RootSplit> exhaustive_root_split(const std::vector<std::vector<double>>& rows,
                                                      const std::vector<servicemonitor::Label>& labels,
                                                      const std::vector<std::size_t>& sample,
                                                      std::size_t min_leaf = 1) {
  using servicemonitor::Label;
  std::int64_t c0 = 0, c1 = 0;
  for (auto s : sample) (labels[s] == Label::kMalicious ? c1 : c0)++;
  const Fraction parent = gini(c0, c1);
  const auto n = static_cast<std::int64_t>(sample.size());

  std::optional<RootSplit> best;
  Fraction best_gain{0, 1};
  const std::size_t k = rows.empty() ? 0 : rows.front().size();
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<double> values;
    for (auto s : sample) values.push_back(rows[s][f]);
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    for (std::size_t v = 0; v + 1 < values.size(); ++v) {
      const double threshold = std::midpoint(values[v], values[v + 1]);
      std::int64_t l0 = 0, l1 = 0, r0 = 0, r1 = 0;
      for (auto s : sample) {
        const bool left = rows[s][f] <= threshold;
        const bool mal = labels[s] == Label::kMalicious;
        if (left) {
          (mal ? l1 : l0)++;
        } else {
          (mal ? r1 : r0)++;
        }
      }
      if (l0 + l1 < static_cast<std::int64_t>(min_leaf) || r0 + r1 < static_cast<std::int64_t>(min_leaf)) continue;
      const Fraction gain = parent - Fraction{l0 + l1, n} * gini(l0, l1) - Fraction{r0 + r1, n} * gini(r0, r1);
      if (!(Fraction{0, 1} < gain)) continue;
      // Enumeration runs in (feature asc, threshold asc) order, so only a
      // strictly larger gain may displace the incumbent.
      if (!best || best_gain < gain) {
        best = RootSplit{f, threshold};
        best_gain = gain;
      }
    }
  }
  return best;
}

/// P(score_mal > score_ben) + 0.5 P(equal), over all pairs; returned as
/// twice-count over (2 * P * N) to match the trapezoid's exact form.
inline double pairwise_auc(std::span<const double> scores, std::span<const servicemonitor::Label> labels) {
  using servicemonitor::Label;
  std::uint64_t twice = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == Label::kMalicious) {
      ++pos;
    } else {
      ++neg;
    }
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != Label::kMalicious) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != Label::kBenign) continue;
      if (scores[i] > scores[j]) {
        twice += 2;
      } else if (scores[i] == scores[j]) {
        twice += 1;
      }
    }
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

/// A small catalog of `n` functions on one interface, codes 1..n.
inline servicemonitor::ServiceCatalog toy_catalog(std::size_t n) {
  std::vector<servicemonitor::ServiceFunction> fns;
  for (std::size_t i = 0; i < n; ++i) {
    fns.push_back({static_cast<servicemonitor::FunctionId>(i), "test.IToy", static_cast<std::uint32_t>(i + 1),
                   "fn" + std::to_string(i), servicemonitor::Category::kOsRelated});
  }
  return servicemonitor::ServiceCatalog(std::move(fns), "toy");
}

/// The three-function catalog of the worked example, in state order
/// getSubscriberId, requestLocationUpdates, sendText.
inline constexpr const char* kExampleCatalogText =
    "# version: example-3\n"
    "com.android.internal.telephony.IPhoneSubInfo\t3\tgetSubscriberId\tTelephonyManager\n"
    "android.location.ILocationManager\t2\trequestLocationUpdates\tLocationManager\n"
    "com.android.internal.telephony.ISms\t1\tsendText\tTelephonyManager\n";

}  // namespace oracle
