#pragma once

// Whole-dataset training and bundle-based scoring.

#include <cstdint>
#include <span>
#include <vector>

#include "servicemonitor/eval.hpp"
#include "servicemonitor/features.hpp"
#include "servicemonitor/forest.hpp"
#include "servicemonitor/persist.hpp"
#include "servicemonitor/reduce.hpp"
#include "servicemonitor/rng.hpp"

namespace servicemonitor {

/// Fits PCA on every row, then the forest on the projected rows.
inline ModelBundle train_bundle(const DatasetMatrix& dataset, const PipelineParams& params, std::uint64_t seed,
                                std::uint64_t timestamp = 0) {
  const auto labels = dataset.labels();
  const RowMatrix x = dataset.matrix();
  ModelBundle b;
  b.catalog_digest = dataset.catalog_digest;
  b.pca = fit_pca(x, params.pca_dims);
  ForestParams fp = params.forest;
  fp.seed = derive_seed(seed, "forest", 0);
  b.forest = train_forest(transform(b.pca, x), labels, fp);
  b.forest.catalog_digest = dataset.catalog_digest;
  b.threshold = params.threshold;
  b.metadata.seed = seed;
  b.metadata.pca_dims = static_cast<std::uint32_t>(params.pca_dims);
  b.metadata.tree_count = static_cast<std::uint32_t>(params.forest.tree_count);
  b.metadata.mtry = static_cast<std::uint32_t>(params.forest.mtry.value_or(0));
  b.metadata.min_leaf = static_cast<std::uint32_t>(params.forest.min_leaf);
  b.metadata.timestamp = timestamp;
  return b;
}

/// Malicious score of one feature vector under a bundle.
inline double score_vector(const ModelBundle& bundle, const FeatureVector& v) {
  if (v.catalog_digest && *v.catalog_digest != bundle.catalog_digest) {
    throw Error(ErrorKind::kBinding, v.app_id + " was featurized against a different catalog than the model");
  }
  if (v.values.size() != bundle.pca.d()) {
    throw Error(ErrorKind::kShape, v.app_id + " has " + std::to_string(v.values.size()) + " features, model expects " +
                                       std::to_string(bundle.pca.d()));
  }
  RowMatrix row(1, static_cast<Eigen::Index>(v.values.size()));
  std::copy(v.values.begin(), v.values.end(), row.data());
  const RowMatrix z = transform(bundle.pca, row);
  return predict_score(bundle.forest, std::span<const double>(z.data(), static_cast<std::size_t>(z.cols())));
}

}  // namespace servicemonitor
