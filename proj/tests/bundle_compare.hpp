#pragma once

#include <cstring>

#include "servicemonitor/persist.hpp"

namespace testing_support {

inline bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

template <typename M>
bool same_bits(const M& a, const M& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (!same_bits(a.data()[i], b.data()[i])) return false;
  }
  return true;
}

/// Field-exact equality with floating-point values compared bit for bit.
inline bool bundles_identical(const servicemonitor::ModelBundle& a, const servicemonitor::ModelBundle& b) {
  if (a.format_version != b.format_version || a.catalog_digest != b.catalog_digest) return false;
  if (!same_bits(a.threshold, b.threshold) || !(a.metadata == b.metadata)) return false;
  if (!same_bits(a.pca.mean, b.pca.mean) || !same_bits(a.pca.components, b.pca.components) ||
      !same_bits(a.pca.explained_variance, b.pca.explained_variance)) {
    return false;
  }
  const auto& fa = a.forest;
  const auto& fb = b.forest;
  if (fa.mtry != fb.mtry || fa.min_leaf != fb.min_leaf || fa.seed != fb.seed || fa.bootstrap != fb.bootstrap ||
      fa.dimensionality != fb.dimensionality || fa.catalog_digest != fb.catalog_digest ||
      fa.trees.size() != fb.trees.size()) {
    return false;
  }
  for (std::size_t t = 0; t < fa.trees.size(); ++t) {
    const auto& na = fa.trees[t].nodes;
    const auto& nb = fb.trees[t].nodes;
    if (na.size() != nb.size()) return false;
    for (std::size_t i = 0; i < na.size(); ++i) {
      if (na[i].leaf != nb[i].leaf || na[i].feature != nb[i].feature || !same_bits(na[i].threshold, nb[i].threshold) ||
          na[i].left != nb[i].left || na[i].right != nb[i].right || na[i].benign != nb[i].benign ||
          na[i].malicious != nb[i].malicious) {
        return false;
      }
    }
  }
  return true;
}

}  // namespace testing_support
