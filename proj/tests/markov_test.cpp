#include <chrono>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "servicemonitor/markov.hpp"
#include "servicemonitor/rng.hpp"

namespace sm = servicemonitor;

namespace {

constexpr sm::FunctionId A = 0, B = 1, C = 2;

void expect_row_stochastic(const sm::RowMatrix& p) {
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    const double sum = p.row(r).sum();
    if (sum == 0.0) {
      EXPECT_TRUE((p.row(r).array() == 0.0).all());
    } else {
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
  }
}

}  // namespace

TEST(BuildFv, WorkedExampleIntermediate) {
  const std::vector<sm::FunctionId> events = {A, B, C, B, C};
  const auto fv = sm::build_fv(events, 3);
  // Hand execution: i=0 adds 1, 1/2, 1/3, 1/4 to AB, AC, AB, AC; i=1 adds 1 to BC
  // then breaks at B; i=2 adds 1 to CB then breaks at C; i=3 adds 1 to BC.
  EXPECT_DOUBLE_EQ(fv(A, B), 4.0 / 3.0);
  EXPECT_DOUBLE_EQ(fv(A, C), 3.0 / 4.0);
  EXPECT_DOUBLE_EQ(fv(B, C), 2.0);
  EXPECT_DOUBLE_EQ(fv(C, B), 1.0);
  EXPECT_EQ(fv(A, A) + fv(B, A) + fv(B, B) + fv(C, A) + fv(C, C), 0.0);
}

TEST(BuildFv, EmptyAndSingleEventAreZero) {
  EXPECT_TRUE(sm::build_fv(std::vector<sm::FunctionId>{}, 3).isZero(0.0));
  EXPECT_TRUE(sm::build_fv(std::vector<sm::FunctionId>{B}, 3).isZero(0.0));
}

TEST(BuildFv, RepeatedSourceBreaksScan) {
  const auto fv = sm::build_fv(std::vector<sm::FunctionId>{A, A, B}, 3);
  sm::RowMatrix expected = sm::RowMatrix::Zero(3, 3);
  expected(A, B) = 1.0;
  EXPECT_EQ(fv, expected);
}

TEST(BuildFv, OutOfRangeEventIsBoundsError) {
  try {
    sm::build_fv(std::vector<sm::FunctionId>{0, 3}, 3);
    FAIL();
  } catch (const sm::Error& e) {
    EXPECT_EQ(e.kind(), sm::ErrorKind::kBounds);
  }
}

TEST(BuildFv, MatchesPairwiseFormulaOnRandomTraces) {
  sm::Xoshiro256 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t states = 1 + rng.below(8);
    std::vector<sm::FunctionId> events(rng.below(51));
    for (auto& e : events) e = static_cast<sm::FunctionId>(rng.below(states));
    const auto fv = sm::build_fv(events, states);
    const auto ref = oracle::fv_by_formula(events, states);
    for (std::size_t x = 0; x < states; ++x) {
      for (std::size_t y = 0; y < states; ++y) {
        ASSERT_NEAR(fv(static_cast<Eigen::Index>(x), static_cast<Eigen::Index>(y)), ref[x][y], 1e-12);
      }
    }
  }
}

TEST(NormalizeRows, ExampleRow) {
  sm::RowMatrix fv = sm::RowMatrix::Zero(3, 3);
  fv(0, 1) = 4.0 / 3.0;
  fv(0, 2) = 3.0 / 4.0;
  const auto p = sm::normalize_rows(fv);
  EXPECT_NEAR(p(0, 0), 0.0, 1e-12);
  EXPECT_NEAR(p(0, 1), 0.64, 1e-12);
  EXPECT_NEAR(p(0, 2), 0.36, 1e-12);
  EXPECT_TRUE(p.row(1).isZero(0.0));
}

TEST(NormalizeRows, SingleMassAndZeroRow) {
  sm::RowMatrix fv = sm::RowMatrix::Zero(3, 3);
  fv(1, 0) = 5.0;
  const auto p = sm::normalize_rows(fv);
  EXPECT_EQ(p(1, 0), 1.0);
  EXPECT_EQ(p.row(0).sum(), 0.0);
  EXPECT_EQ(p.row(2).sum(), 0.0);
}

TEST(NormalizeRows, NegativeWeightIsDomainError) {
  sm::RowMatrix fv = sm::RowMatrix::Zero(2, 2);
  fv(0, 1) = -0.5;
  try {
    sm::normalize_rows(fv);
    FAIL();
  } catch (const sm::Error& e) {
    EXPECT_EQ(e.kind(), sm::ErrorKind::kDomain);
  }
}

TEST(BuildModel, WorkedExampleProbabilities) {
  const auto cat = sm::load_catalog(oracle::kExampleCatalogText);
  sm::FunctionTrace trace{"example", {A, B, C, B, C}, std::nullopt};
  const auto model = sm::build_model(trace, cat);
  EXPECT_EQ(model.state_count, 3u);
  const double expected[9] = {0, 0.64, 0.36, 0, 0, 1, 0, 1, 0};
  for (int i = 0; i < 9; ++i) EXPECT_NEAR(model.probabilities(i / 3, i % 3), expected[i], 1e-9) << i;
}

TEST(BuildModel, RepeatedFunctionAndSinglePair) {
  const auto cat = oracle::toy_catalog(3);
  EXPECT_TRUE(sm::build_model({"r", {A, A, A, A}, {}}, cat).probabilities.isZero(0.0));
  const auto pair = sm::build_model({"p", {A, B}, {}}, cat).probabilities;
  sm::RowMatrix expected = sm::RowMatrix::Zero(3, 3);
  expected(A, B) = 1.0;
  EXPECT_EQ(pair, expected);
}

TEST(BuildModel, InvariantsHoldOnRandomTracesAndConcatenations) {
  sm::Xoshiro256 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t states = 2 + rng.below(10);
    const auto cat = oracle::toy_catalog(states + 1);  // last state reserved as the fresh separator
    std::vector<sm::FunctionId> sigma(rng.below(60));
    for (auto& e : sigma) e = static_cast<sm::FunctionId>(rng.below(states));
    std::vector<sm::FunctionId> joined = sigma;
    joined.push_back(static_cast<sm::FunctionId>(states));
    joined.insert(joined.end(), sigma.begin(), sigma.end());

    for (const auto& events : {sigma, joined}) {
      const auto model = sm::build_model({"t", events, {}}, cat);
      EXPECT_TRUE(model.fv.diagonal().isZero(0.0));
      EXPECT_TRUE(model.probabilities.diagonal().isZero(0.0));
      expect_row_stochastic(model.probabilities);
      EXPECT_TRUE(((model.probabilities.array() > 0.0) <= (model.fv.array() > 0.0)).all());
      EXPECT_TRUE((model.probabilities.array() >= 0.0).all() && (model.probabilities.array() <= 1.0).all());
    }
  }
}

TEST(BuildModel, TenThousandEventsOverFiftyStatesUnderOneSecond) {
  sm::Xoshiro256 rng(9);
  const auto cat = oracle::toy_catalog(50);
  sm::FunctionTrace trace{"long", std::vector<sm::FunctionId>(10'000), {}};
  for (auto& e : trace.events) e = static_cast<sm::FunctionId>(rng.below(50));
  const auto start = std::chrono::steady_clock::now();
  const auto model = sm::build_model(trace, cat);
  const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(elapsed, 1.0);
  expect_row_stochastic(model.probabilities);
}

TEST(BuildModel, WorstCaseNonRepeatingTraceStaysQuadratic) {
  // A strictly increasing trace never breaks a scan: n(n-1)/2 updates.
  const std::size_t n = 3000;
  const auto cat = oracle::toy_catalog(n);
  sm::FunctionTrace trace{"worst", std::vector<sm::FunctionId>(n), {}};
  for (std::size_t i = 0; i < n; ++i) trace.events[i] = static_cast<sm::FunctionId>(i);
  const auto start = std::chrono::steady_clock::now();
  const auto fv = sm::build_fv(trace, n);
  const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(elapsed, 2.0);
  EXPECT_DOUBLE_EQ(fv(0, 2), 0.5);
  EXPECT_DOUBLE_EQ(fv(10, 11), 1.0);
}
