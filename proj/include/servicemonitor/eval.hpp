#pragma once

// Stratified k-fold cross-validation and detection metrics. Malicious is the
// positive class: TP = malicious called malicious, FP = benign called
// malicious.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "servicemonitor/error.hpp"
#include "servicemonitor/features.hpp"
#include "servicemonitor/forest.hpp"
#include "servicemonitor/label.hpp"
#include "servicemonitor/parallel.hpp"
#include "servicemonitor/reduce.hpp"
#include "servicemonitor/rng.hpp"

namespace servicemonitor {

struct Confusion {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const noexcept { return tp + tn + fp + fn; }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

struct EvalReport {
  double accuracy = 0.0;
  double fpr = 0.0;
  double fnr = 0.0;
  double auc = 0.0;
  std::vector<RocPoint> roc_points;
  std::size_t fold_count = 0;
  Confusion confusion;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  std::vector<double> fold_aucs;           ///< filled when per-fold AUC averaging is requested
  std::vector<std::string> undefined_metrics;  ///< metrics whose ratio was 0/0 (reported as 0)

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// --- folds -------------------------------------------------------------------

/// Per class, indices are shuffled with a seeded stream and dealt round-robin
/// into folds; the deal continues where the previous class stopped so fold
/// sizes differ by at most one.
inline std::vector<std::vector<std::size_t>> stratified_folds(std::span<const Label> labels, std::size_t k,
                                                              std::uint64_t seed) {
  if (k < 2) throw Error(ErrorKind::kStratification, "need at least 2 folds");
  std::vector<std::vector<std::size_t>> by_class(2);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  for (std::size_t c = 0; c < 2; ++c) {
    if (by_class[c].size() < k) {
      throw Error(ErrorKind::kStratification,
                  "class " + std::string(to_string(static_cast<Label>(c))) + " has " +
                      std::to_string(by_class[c].size()) + " member(s), fewer than " + std::to_string(k) + " folds");
    }
  }
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t slot = 0;
  for (std::size_t c = 0; c < 2; ++c) {
    auto& members = by_class[c];
    Xoshiro256 rng(derive_seed(seed, "folds", c));
    for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[rng.below(i)]);
    for (auto idx : members) {
      folds[slot].push_back(idx);
      slot = (slot + 1) % k;
    }
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

// --- metrics -----------------------------------------------------------------

inline Confusion confusion_at(std::span<const double> scores, std::span<const Label> labels, double threshold) {
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool called = scores[i] > threshold;
    if (labels[i] == Label::kMalicious) {
      (called ? c.tp : c.fn)++;
    } else {
      (called ? c.fp : c.tn)++;
    }
  }
  return c;
}

struct RocResult {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

/// Threshold sweep over unique scores, descending; tied scores move together
/// (a diagonal segment). Area by the trapezoidal rule, accumulated in integer
/// counts so it equals the pairwise ranking statistic exactly.
inline RocResult roc_and_auc(std::span<const double> scores, std::span<const Label> labels) {
  if (scores.size() != labels.size()) throw Error(ErrorKind::kShape, "scores and labels differ in length");
  const auto positives = static_cast<std::uint64_t>(std::count(labels.begin(), labels.end(), Label::kMalicious));
  const auto negatives = static_cast<std::uint64_t>(labels.size()) - positives;
  if (positives == 0 || negatives == 0) throw Error(ErrorKind::kMetric, "ROC needs both classes present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocResult out;
  out.points.push_back({0.0, 0.0});
  unsigned __int128 twice_area = 0;
  std::uint64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::uint64_t dtp = 0, dfp = 0;
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] == Label::kMalicious ? dtp : dfp)++;
    twice_area += static_cast<unsigned __int128>(dfp) * (2 * tp + dtp);
    tp += dtp;
    fp += dfp;
    out.points.push_back({static_cast<double>(fp) / static_cast<double>(negatives),
                          static_cast<double>(tp) / static_cast<double>(positives)});
  }
  out.auc = static_cast<double>(twice_area) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
  return out;
}

namespace detail {
inline double ratio(std::uint64_t num, std::uint64_t den, const char* name, std::vector<std::string>& undefined) {
  if (den == 0) {
    undefined.emplace_back(name);
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace detail

/// Report over pooled scores.
inline EvalReport make_report(std::span<const double> scores, std::span<const Label> labels, double threshold) {
  EvalReport r;
  r.threshold = threshold;
  r.confusion = confusion_at(scores, labels, threshold);
  const auto& c = r.confusion;
  r.accuracy = detail::ratio(c.tp + c.tn, c.total(), "accuracy", r.undefined_metrics);
  r.fpr = detail::ratio(c.fp, c.fp + c.tn, "fpr", r.undefined_metrics);
  r.fnr = detail::ratio(c.fn, c.fn + c.tp, "fnr", r.undefined_metrics);
  auto roc = roc_and_auc(scores, labels);
  r.roc_points = std::move(roc.points);
  r.auc = roc.auc;
  return r;
}

// --- cross-validation -------------------------------------------------------

struct PipelineParams {
  std::size_t pca_dims = 200;
  ForestParams forest;  ///< forest.seed is ignored; per-fold seeds derive from the CV seed
  double threshold = 0.5;
  bool global_pca = false;     ///< fit PCA once on all rows instead of per training split
  bool per_fold_auc = false;   ///< report the mean of per-fold AUCs instead of the pooled AUC
};

/// Rows are first put in canonical app_id order, so the report does not
/// depend on input row order.
inline EvalReport cross_validate(const DatasetMatrix& dataset, const PipelineParams& params, std::size_t k,
                                 std::uint64_t seed) {
  std::vector<std::size_t> order(dataset.rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dataset.rows[a].app_id < dataset.rows[b].app_id; });

  const std::size_t n = order.size();
  const auto d = static_cast<Eigen::Index>(dataset.dimension());
  RowMatrix x(static_cast<Eigen::Index>(n), d);
  std::vector<Label> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& row = dataset.rows[order[i]];
    if (!row.label) throw Error(ErrorKind::kLabel, "row " + row.app_id + " is unlabeled");
    if (static_cast<Eigen::Index>(row.values.size()) != d) throw Error(ErrorKind::kShape, "ragged dataset");
    x.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Vector>(row.values.data(), d).transpose();
    y[i] = *row.label;
  }

  const auto folds = stratified_folds(y, k, seed);
  std::optional<PcaModel> global;
  if (params.global_pca) global = fit_pca(x, params.pca_dims);

  std::vector<std::vector<double>> fold_scores(k);
  parallel_for(k, [&](std::size_t f) {
    std::vector<bool> held(n, false);
    for (auto i : folds[f]) held[i] = true;
    std::vector<Eigen::Index> train_rows;
    std::vector<Label> train_labels;
    for (std::size_t i = 0; i < n; ++i) {
      if (held[i]) continue;
      train_rows.push_back(static_cast<Eigen::Index>(i));
      train_labels.push_back(y[i]);
    }
    std::vector<Eigen::Index> test_rows(folds[f].begin(), folds[f].end());
    const RowMatrix train = x(train_rows, Eigen::all);
    const RowMatrix test = x(test_rows, Eigen::all);

    const PcaModel pca = global ? *global : fit_pca(train, params.pca_dims);
    ForestParams fp = params.forest;
    fp.seed = derive_seed(seed, "forest", f);
    const ForestModel forest = train_forest(transform(pca, train), train_labels, fp);
    fold_scores[f] = predict_scores(forest, transform(pca, test));
  });

  std::vector<double> pooled(n);
  for (std::size_t f = 0; f < k; ++f) {
    for (std::size_t j = 0; j < folds[f].size(); ++j) pooled[folds[f][j]] = fold_scores[f][j];
  }
  EvalReport report = make_report(pooled, y, params.threshold);
  report.fold_count = k;
  report.seed = seed;
  if (params.per_fold_auc) {
    double sum = 0.0;
    for (std::size_t f = 0; f < k; ++f) {
      std::vector<Label> fl;
      for (auto i : folds[f]) fl.push_back(y[i]);
      report.fold_aucs.push_back(roc_and_auc(fold_scores[f], fl).auc);
      sum += report.fold_aucs.back();
    }
    report.auc = sum / static_cast<double>(k);
  }
  return report;
}

// --- output -----------------------------------------------------------------

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["accuracy"] = r.accuracy;
  j["fpr"] = r.fpr;
  j["fnr"] = r.fnr;
  j["auc"] = r.auc;
  j["threshold"] = r.threshold;
  j["fold_count"] = r.fold_count;
  j["seed"] = r.seed;
  j["confusion"] = {{"tp", r.confusion.tp}, {"tn", r.confusion.tn}, {"fp", r.confusion.fp}, {"fn", r.confusion.fn}};
  j["undefined_metrics"] = r.undefined_metrics;
  if (!r.fold_aucs.empty()) j["fold_aucs"] = r.fold_aucs;
  auto pts = nlohmann::ordered_json::array();
  for (const auto& p : r.roc_points) pts.push_back({p.fpr, p.tpr});
  j["roc_points"] = std::move(pts);
  return j;
}

inline std::string roc_csv(const EvalReport& r) {
  std::string out = "fpr,tpr\n";
  for (const auto& p : r.roc_points) {
    out += nlohmann::json(p.fpr).dump() + "," + nlohmann::json(p.tpr).dump() + "\n";
  }
  return out;
}

inline std::string format_table(const EvalReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "folds      %zu\n"
                "samples    %llu\n"
                "accuracy   %.4f\n"
                "fpr        %.4f\n"
                "fnr        %.4f\n"
                "auc        %.4f\n"
                "confusion  tp=%llu tn=%llu fp=%llu fn=%llu\n",
                r.fold_count, static_cast<unsigned long long>(r.confusion.total()), r.accuracy, r.fpr, r.fnr, r.auc,
                static_cast<unsigned long long>(r.confusion.tp), static_cast<unsigned long long>(r.confusion.tn),
                static_cast<unsigned long long>(r.confusion.fp), static_cast<unsigned long long>(r.confusion.fn));
  std::string out = buf;
  for (const auto& m : r.undefined_metrics) out += "note       " + m + " undefined (0/0), reported as 0\n";
  return out;
}

}  // namespace servicemonitor
