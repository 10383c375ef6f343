#pragma once

// Random Forest binary classifier: bagged CART trees split on Gini impurity
// with per-node feature subsampling. The malicious score of a sample is the
// fraction of trees whose leaf majority is malicious.
//
// Split rule at a node holding sample multiset S:
//   * candidate thresholds are midpoints of consecutive distinct values of a
//     feature over S; x <= threshold goes left;
//   * a candidate is admissible when both sides hold >= min_leaf samples;
//   * the best candidate maximizes the weighted Gini decrease, equivalently
//     (L0^2 + L1^2)/|L| + (R0^2 + R1^2)/|R|, compared exactly as a rational;
//   * ties go to the lower feature index, then the lower threshold;
//   * the node stays a leaf when pure, when |S| < 2 * min_leaf, or when no
//     admissible candidate strictly decreases impurity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "servicemonitor/digest.hpp"
#include "servicemonitor/error.hpp"
#include "servicemonitor/label.hpp"
#include "servicemonitor/matrix.hpp"
#include "servicemonitor/parallel.hpp"
#include "servicemonitor/rng.hpp"

namespace servicemonitor {

struct ForestParams {
  std::size_t tree_count = 500;
  std::optional<std::size_t> mtry;  ///< default floor(sqrt(dimensionality)), at least 1
  std::size_t min_leaf = 1;
  std::uint64_t seed = 0;
  bool bootstrap = true;

  std::size_t resolved_mtry(std::size_t dimensionality) const {
    if (mtry) return *mtry;
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(dimensionality)))));
  }
};

/// Flat node; children are indices into the owning tree's node array.
struct TreeNode {
  bool leaf = true;
  std::uint32_t feature = 0;
  double threshold = 0.0;
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  std::uint32_t benign = 0;
  std::uint32_t malicious = 0;

  bool votes_malicious() const noexcept { return malicious > benign; }
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  ///< nodes[0] is the root; preorder, left subtree first

  const TreeNode& leaf_for(std::span<const double> x) const {
    std::uint32_t at = 0;
    while (!nodes[at].leaf) at = x[nodes[at].feature] <= nodes[at].threshold ? nodes[at].left : nodes[at].right;
    return nodes[at];
  }
};

struct ForestModel {
  std::vector<DecisionTree> trees;
  std::size_t mtry = 1;
  std::size_t min_leaf = 1;
  std::uint64_t seed = 0;
  bool bootstrap = true;
  std::size_t dimensionality = 0;
  Digest catalog_digest{};

  std::size_t tree_count() const noexcept { return trees.size(); }
};

/// Exact score of a split: num / den with den > 0.
struct SplitScore {
  __int128 num = 0;
  __int128 den = 1;

  static SplitScore of(std::int64_t l0, std::int64_t l1, std::int64_t r0, std::int64_t r1) {
    const std::int64_t nl = l0 + l1;
    const std::int64_t nr = r0 + r1;
    SplitScore s;
    s.num = static_cast<__int128>(l0 * l0 + l1 * l1) * nr + static_cast<__int128>(r0 * r0 + r1 * r1) * nl;
    s.den = static_cast<__int128>(nl) * nr;
    return s;
  }
  static SplitScore parent(std::int64_t c0, std::int64_t c1) {
    return SplitScore{static_cast<__int128>(c0 * c0 + c1 * c1), c0 + c1};
  }

  friend bool operator<(const SplitScore& a, const SplitScore& b) { return a.num * b.den < b.num * a.den; }
  friend bool operator==(const SplitScore& a, const SplitScore& b) { return a.num * b.den == b.num * a.den; }
};

struct SplitChoice {
  std::uint32_t feature = 0;
  double threshold = 0.0;
  SplitScore score;
};

/// Sample indices of one bootstrap draw: n indices uniform in [0, n).
inline std::vector<std::uint32_t> bootstrap_indices(std::size_t n, std::uint64_t forest_seed, std::size_t tree_index) {
  Xoshiro256 rng(derive_seed(forest_seed, "tree", tree_index));
  std::vector<std::uint32_t> out(n);
  for (auto& i : out) i = static_cast<std::uint32_t>(rng.below(n));
  return out;
}

/// Best admissible split of `samples` over `features`, if any strictly
/// decreases Gini impurity.
inline std::optional<SplitChoice> best_split(const RowMatrix& data, std::span<const Label> labels,
                                             std::span<const std::uint32_t> samples,
                                             std::span<const std::uint32_t> features, std::size_t min_leaf) {
  std::int64_t total[2] = {0, 0};
  for (auto s : samples) ++total[static_cast<int>(labels[s])];
  const SplitScore parent = SplitScore::parent(total[0], total[1]);
  const auto n = static_cast<std::int64_t>(samples.size());
  const auto leaf_min = static_cast<std::int64_t>(min_leaf);

  std::optional<SplitChoice> best;
  std::vector<std::pair<double, int>> column(samples.size());
  for (auto f : features) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      column[i] = {data(samples[i], f), static_cast<int>(labels[samples[i]])};
    }
    std::sort(column.begin(), column.end());
    std::int64_t left[2] = {0, 0};
    for (std::size_t i = 0; i + 1 < column.size(); ++i) {
      ++left[column[i].second];
      if (column[i].first == column[i + 1].first) continue;
      const auto nl = static_cast<std::int64_t>(i + 1);
      if (nl < leaf_min || n - nl < leaf_min) continue;
      const SplitScore score = SplitScore::of(left[0], left[1], total[0] - left[0], total[1] - left[1]);
      if (!(parent < score)) continue;
      double threshold = std::midpoint(column[i].first, column[i + 1].first);
      if (!(threshold < column[i + 1].first)) threshold = column[i].first;
      const bool better = !best || best->score < score ||
                          (best->score == score &&
                           (f < best->feature || (f == best->feature && threshold < best->threshold)));
      if (better) best = SplitChoice{f, threshold, score};
    }
  }
  return best;
}

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(const RowMatrix& data, std::span<const Label> labels, std::size_t mtry, std::size_t min_leaf,
              Xoshiro256& rng)
      : data_(data), labels_(labels), mtry_(mtry), min_leaf_(min_leaf), rng_(rng),
        feature_pool_(static_cast<std::size_t>(data.cols())) {}

  DecisionTree build(std::vector<std::uint32_t> samples) {
    DecisionTree tree;
    grow(tree, samples);
    return tree;
  }

 private:
  std::uint32_t grow(DecisionTree& tree, std::span<std::uint32_t> samples) {
    const auto index = static_cast<std::uint32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    TreeNode node;
    for (auto s : samples) (labels_[s] == Label::kMalicious ? node.malicious : node.benign)++;

    const bool pure = node.benign == 0 || node.malicious == 0;
    if (pure || samples.size() < 2 * min_leaf_) {
      tree.nodes[index] = node;
      return index;
    }
    auto split = best_split(data_, labels_, samples, sample_features(), min_leaf_);
    if (!split) {
      tree.nodes[index] = node;
      return index;
    }
    auto mid = std::stable_partition(samples.begin(), samples.end(), [&](std::uint32_t s) {
      return data_(s, split->feature) <= split->threshold;
    });
    const auto cut = static_cast<std::size_t>(mid - samples.begin());
    node.leaf = false;
    node.feature = split->feature;
    node.threshold = split->threshold;
    node.left = grow(tree, samples.subspan(0, cut));
    node.right = grow(tree, samples.subspan(cut));
    tree.nodes[index] = node;
    return index;
  }

  /// mtry distinct features via partial Fisher-Yates, returned ascending.
  std::vector<std::uint32_t> sample_features() {
    std::iota(feature_pool_.begin(), feature_pool_.end(), 0u);
    const std::size_t k = feature_pool_.size();
    for (std::size_t i = 0; i < mtry_; ++i) {
      const std::size_t j = i + rng_.below(k - i);
      std::swap(feature_pool_[i], feature_pool_[j]);
    }
    std::vector<std::uint32_t> chosen(feature_pool_.begin(), feature_pool_.begin() + static_cast<std::ptrdiff_t>(mtry_));
    std::sort(chosen.begin(), chosen.end());
    return chosen;
  }

  const RowMatrix& data_;
  std::span<const Label> labels_;
  std::size_t mtry_;
  std::size_t min_leaf_;
  Xoshiro256& rng_;
  std::vector<std::uint32_t> feature_pool_;
};

}  // namespace detail

inline ForestModel train_forest(const RowMatrix& data, std::span<const Label> labels, const ForestParams& params) {
  const auto n = static_cast<std::size_t>(data.rows());
  const auto k = static_cast<std::size_t>(data.cols());
  if (labels.size() != n) {
    throw Error(ErrorKind::kShape, std::to_string(n) + " rows but " + std::to_string(labels.size()) + " labels");
  }
  if (n < 2) throw Error(ErrorKind::kTraining, "need at least 2 training samples");
  if (k < 1) throw Error(ErrorKind::kShape, "training data has no features");
  if (!data.allFinite()) throw Error(ErrorKind::kDomain, "training data contains non-finite entries");
  const auto malicious = std::count(labels.begin(), labels.end(), Label::kMalicious);
  if (malicious == 0 || static_cast<std::size_t>(malicious) == n) {
    throw Error(ErrorKind::kTraining, "training data contains a single class");
  }
  const std::size_t mtry = params.resolved_mtry(k);
  if (mtry < 1 || mtry > k) {
    throw Error(ErrorKind::kConfig, "mtry " + std::to_string(mtry) + " outside [1, " + std::to_string(k) + "]");
  }
  if (params.tree_count < 1) throw Error(ErrorKind::kConfig, "tree_count must be >= 1");
  if (params.min_leaf < 1) throw Error(ErrorKind::kConfig, "min_leaf must be >= 1");

  ForestModel model;
  model.mtry = mtry;
  model.min_leaf = params.min_leaf;
  model.seed = params.seed;
  model.bootstrap = params.bootstrap;
  model.dimensionality = k;
  model.trees.resize(params.tree_count);

  parallel_for(params.tree_count, [&](std::size_t t) {
    // Bootstrap draws come first from the tree's stream, then feature draws.
    Xoshiro256 rng(derive_seed(params.seed, "tree", t));
    std::vector<std::uint32_t> samples(n);
    if (params.bootstrap) {
      for (auto& s : samples) s = static_cast<std::uint32_t>(rng.below(n));
    } else {
      std::iota(samples.begin(), samples.end(), 0u);
    }
    detail::TreeBuilder builder(data, labels, mtry, params.min_leaf, rng);
    model.trees[t] = builder.build(std::move(samples));
  });
  return model;
}

inline std::size_t malicious_votes(const ForestModel& model, std::span<const double> x) {
  if (x.size() != model.dimensionality) {
    throw Error(ErrorKind::kShape, "forest expects " + std::to_string(model.dimensionality) + " features, got " +
                                       std::to_string(x.size()));
  }
  std::size_t votes = 0;
  for (const auto& tree : model.trees) votes += tree.leaf_for(x).votes_malicious() ? 1 : 0;
  return votes;
}

inline double predict_score(const ForestModel& model, std::span<const double> x) {
  if (model.trees.empty()) throw Error(ErrorKind::kConsistency, "forest has no trees");
  return static_cast<double>(malicious_votes(model, x)) / static_cast<double>(model.tree_count());
}

inline Label predict_label(const ForestModel& model, std::span<const double> x, double threshold = 0.5) {
  return predict_score(model, x) > threshold ? Label::kMalicious : Label::kBenign;
}

/// Scores for every row of a matrix.
inline std::vector<double> predict_scores(const ForestModel& model, const RowMatrix& data) {
  std::vector<double> out(static_cast<std::size_t>(data.rows()));
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    const Vector row = data.row(r).transpose();
    out[static_cast<std::size_t>(r)] = predict_score(model, std::span<const double>(row.data(), row.size()));
  }
  return out;
}

/// Out-of-bag misclassification rate over samples with at least one OOB
/// vote; a sample is called malicious when OOB malicious votes outnumber
/// benign ones. Requires the exact training data the model was fit on.
inline double oob_error(const ForestModel& model, const RowMatrix& data, std::span<const Label> labels) {
  if (!model.bootstrap) throw Error(ErrorKind::kConfig, "out-of-bag error needs a bootstrapped forest");
  const auto n = static_cast<std::size_t>(data.rows());
  std::vector<std::size_t> mal(n, 0), ben(n, 0);
  for (std::size_t t = 0; t < model.tree_count(); ++t) {
    std::vector<bool> in_bag(n, false);
    for (auto i : bootstrap_indices(n, model.seed, t)) in_bag[i] = true;
    for (std::size_t i = 0; i < n; ++i) {
      if (in_bag[i]) continue;
      const Vector row = data.row(static_cast<Eigen::Index>(i)).transpose();
      const bool vote = model.trees[t].leaf_for(std::span<const double>(row.data(), row.size())).votes_malicious();
      (vote ? mal[i] : ben[i])++;
    }
  }
  std::size_t counted = 0, wrong = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (mal[i] + ben[i] == 0) continue;
    ++counted;
    const Label called = mal[i] > ben[i] ? Label::kMalicious : Label::kBenign;
    if (called != labels[i]) ++wrong;
  }
  return counted == 0 ? 0.0 : static_cast<double>(wrong) / static_cast<double>(counted);
}

}  // namespace servicemonitor
