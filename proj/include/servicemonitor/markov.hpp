#pragma once

// Markov-chain transition model of one application's service-request trace.
//
// Edge weight FV[x][y] accumulates 1/(j-i) for every ordered pair of trace
// positions i < j with State(F_i) = x, State(F_j) = y, x != y, such that x does
// not recur strictly between i and j. Rows are then normalized over the state
// columns. Cost is O(|trace|^2) in the worst case (no source recurrence).

#include <cstddef>
#include <span>

#include "servicemonitor/catalog.hpp"
#include "servicemonitor/error.hpp"
#include "servicemonitor/matrix.hpp"
#include "servicemonitor/trace.hpp"

namespace servicemonitor {

struct TransitionModel {
  std::size_t state_count = 0;
  RowMatrix fv;             ///< pre-normalization weights
  RowMatrix probabilities;  ///< row-normalized fv; all-zero rows stay zero
};

inline RowMatrix build_fv(std::span<const FunctionId> events, std::size_t state_count) {
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (events[i] >= state_count) {
      throw Error(ErrorKind::kBounds, "event " + std::to_string(i) + " has state " +
                                          std::to_string(events[i]) + " >= state count " +
                                          std::to_string(state_count));
    }
  }
  RowMatrix fv = RowMatrix::Zero(static_cast<Eigen::Index>(state_count),
                                 static_cast<Eigen::Index>(state_count));
  const std::size_t n = events.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto from = static_cast<Eigen::Index>(events[i]);
    for (std::size_t j = i + 1; j < n; ++j) {
      if (events[j] == events[i]) break;
      fv(from, static_cast<Eigen::Index>(events[j])) += 1.0 / static_cast<double>(j - i);
    }
  }
  return fv;
}

inline RowMatrix build_fv(const FunctionTrace& trace, std::size_t state_count) {
  return build_fv(std::span<const FunctionId>(trace.events), state_count);
}

inline RowMatrix normalize_rows(const RowMatrix& fv) {
  if ((fv.array() < 0.0).any()) throw Error(ErrorKind::kDomain, "negative transition weight");
  if (!fv.allFinite()) throw Error(ErrorKind::kDomain, "non-finite transition weight");
  RowMatrix p = fv;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const double sum = p.row(r).sum();
    if (sum > 0.0) p.row(r) /= sum;
  }
  return p;
}

inline TransitionModel build_model(const FunctionTrace& trace, const ServiceCatalog& catalog) {
  TransitionModel model;
  model.state_count = catalog.size();
  model.fv = build_fv(trace, model.state_count);
  model.probabilities = normalize_rows(model.fv);
  return model;
}

}  // namespace servicemonitor
