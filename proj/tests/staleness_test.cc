/* Copyright 2026 The PipeSim Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "pipesim/staleness.h"

#include <cmath>
#include <limits>
#include <numbers>

#include <gtest/gtest.h>
#include <mpfr.h>

namespace pipesim {
namespace {

// exp(-lambda * delta) at 256 bits, rounded once to double.
double MpfrDecay(double lambda, int delta) {
  mpfr_t x;
  mpfr_init2(x, 256);
  mpfr_set_d(x, lambda, MPFR_RNDN);
  mpfr_mul_si(x, x, -delta, MPFR_RNDN);
  mpfr_exp(x, x, MPFR_RNDN);
  const double out = mpfr_get_d(x, MPFR_RNDN);
  mpfr_clear(x);
  return out;
}

// 2 - exp(lambda * delta) at 256 bits.
double MpfrFactor(double lambda, int delta) {
  mpfr_t x;
  mpfr_init2(x, 256);
  mpfr_set_d(x, lambda, MPFR_RNDN);
  mpfr_mul_si(x, x, delta, MPFR_RNDN);
  mpfr_exp(x, x, MPFR_RNDN);
  mpfr_si_sub(x, 2, x, MPFR_RNDN);
  const double out = mpfr_get_d(x, MPFR_RNDN);
  mpfr_clear(x);
  return out;
}

DecayParams L(double lambda) { return DecayParams{lambda, std::nullopt}; }

TEST(SignificanceTest, MatchesHighPrecisionOracleOnGrid) {
  for (double lambda : {0.01, 0.1, 0.25, 0.5, 1.0, std::numbers::ln2, 2.0, 3.7}) {
    for (int delta = 0; delta <= 20; ++delta) {
      EXPECT_NEAR(Significance(delta, L(lambda)), MpfrDecay(lambda, delta), 1e-12)
          << "lambda=" << lambda << " delta=" << delta;
    }
  }
}

TEST(SignificanceTest, KnownValues) {
  EXPECT_EQ(Significance(0, L(0.5)), 1.0);
  EXPECT_EQ(Significance(0, L(123.0)), 1.0);
  EXPECT_NEAR(Significance(1, L(1.0)), 0.36787944117144233, 1e-16);
  EXPECT_NEAR(Significance(4, L(0.5)), 0.1353352832366127, 1e-16);
}

TEST(SignificanceTest, StrictlyDecreasingInDelta) {
  for (double lambda : {0.05, 0.5, 1.0, 2.0}) {
    double prev = Significance(0, L(lambda));
    for (int delta = 1; delta <= 30; ++delta) {
      const double f = Significance(delta, L(lambda));
      EXPECT_LT(f, prev);
      EXPECT_GT(f, 0.0);
      prev = f;
    }
  }
}

TEST(SignificanceTest, RejectsNegativeDeltaAndBadLambda) {
  try {
    Significance(-1, L(0.5));
    FAIL();
  } catch (const SimError& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNegativeDelta);
  }
  for (double bad : {0.0, -1.0, std::numeric_limits<double>::quiet_NaN(),
                     std::numeric_limits<double>::infinity()}) {
    try {
      Significance(1, L(bad));
      FAIL() << bad;
    } catch (const SimError& e) {
      EXPECT_EQ(e.code(), ErrorCode::kNonPositiveLambda);
    }
  }
}

// f' = -lambda f stepped with d(delta) = 1/n converges to exp(-lambda delta)
// with O(1/n) error.
TEST(SignificanceTest, DifferenceEquationConvergesToClosedForm) {
  const long n = 1'000'000;
  const double lambda = 1.0;
  for (int delta : {1, 2, 3}) {
    double f = 1.0;
    for (long i = 0; i < n * delta; ++i) f *= 1.0 - lambda / static_cast<double>(n);
    const double closed = Significance(delta, L(lambda));
    EXPECT_LE(std::abs(f - closed), 10.0 * lambda * lambda * delta / n) << delta;
  }
}

TEST(IntermediateFactorTest, RangeAndFixedPoint) {
  EXPECT_EQ(IntermediateFactor(1.0), 1.0);
  EXPECT_EQ(IntermediateFactor(0.5), 0.0);
  EXPECT_NEAR(IntermediateFactor(std::exp(-1.0)), -0.7182818284590451, 1e-15);
  for (int i = 1; i < 1000; ++i) {
    const double f = i / 1000.0;
    const double g = IntermediateFactor(f);
    EXPECT_LT(g, 1.0) << f;
    if (f < 0.5) EXPECT_LT(g, 0.0) << f;
  }
  EXPECT_LT(IntermediateFactor(1e-9), -1e8);
}

TEST(IntermediateFactorTest, RejectsOutOfRange) {
  for (double bad : {0.0, -0.1, 1.0000001, std::numeric_limits<double>::quiet_NaN()}) {
    try {
      IntermediateFactor(bad);
      FAIL() << bad;
    } catch (const SimError& e) {
      EXPECT_EQ(e.code(), ErrorCode::kFactorOutOfRange);
    }
  }
}

TEST(IntermediateWeightsTest, ZeroStalenessIsExactIdentity) {
  const std::vector<double> w = {0.1, -3.25, 1e-300, 7.0, -0.0};
  for (double lambda : {0.01, 0.5, 9.0}) {
    const auto out = IntermediateWeights(w, 0, L(lambda));
    ASSERT_EQ(out.size(), w.size());
    for (size_t i = 0; i < w.size(); ++i) {
      EXPECT_EQ(std::signbit(out[i]), std::signbit(w[i]));
      EXPECT_EQ(out[i], w[i]);
    }
  }
}

TEST(IntermediateWeightsTest, HalfSignificanceZeroesWeights) {
  const auto out = IntermediateWeights(std::vector<double>{1.0}, 1, L(std::numbers::ln2));
  EXPECT_NEAR(out[0], 0.0, 1e-15);
}

TEST(IntermediateWeightsTest, MatchesScalarOracle) {
  const std::vector<double> stale = {3.0, 0.0, -1.5};
  const double factor = MpfrFactor(0.1, 2);
  const auto out = IntermediateWeights(stale, 2, L(0.1));
  EXPECT_NEAR(out[0], 3.0 * factor, 1e-15);
  EXPECT_EQ(out[1], 0.0);
  EXPECT_NEAR(out[2], -1.5 * factor, 1e-15);
}

TEST(IntermediateWeightsTest, ClampIsOptional) {
  const std::vector<double> w = {2.0};
  const auto raw = IntermediateWeights(w, 3, L(0.5));
  EXPECT_NEAR(raw[0], 2.0 * MpfrFactor(0.5, 3), 1e-14);
  EXPECT_LT(raw[0], 0.0);
  const auto clamped = IntermediateWeights(w, 3, DecayParams{0.5, 0.0});
  EXPECT_EQ(clamped[0], 0.0);
}

TEST(IntermediateWeightsTest, RejectsEmptyInput) {
  EXPECT_THROW(IntermediateWeights(std::vector<double>{}, 1, L(0.5)), SimError);
}

TEST(UpdateLogTest, CountsHalfOpenInterval) {
  UpdateLog log(2);
  for (Tick t : {3, 5, 5, 9}) log.Record(StageId{0}, t);
  EXPECT_EQ(log.CountBetween(StageId{0}, 0, 10), 4);
  EXPECT_EQ(log.CountBetween(StageId{0}, 3, 5), 2);
  EXPECT_EQ(log.CountBetween(StageId{0}, 5, 8), 0);
  EXPECT_EQ(log.CountBetween(StageId{0}, 9, 9), 0);
  EXPECT_EQ(log.CountBetween(StageId{1}, 0, 10), 0);
  EXPECT_THROW(log.Record(StageId{2}, 1), SimError);
}

TEST(DeltaOfTest, CountsCommitsSinceForwardResolution) {
  UpdateLog log(1);
  log.Record(StageId{0}, 2);
  log.Record(StageId{0}, 6);
  log.Record(StageId{0}, 8);
  ForwardResolutions fwd{{{0, 4}, 2}};
  ScheduleEvent b{StageId{0}, 8, 10, Pass::kBackward, BatchRef{4, std::nullopt}};
  // The commit at the resolution tick landed before it; the one at the
  // backward start landed before the backward.
  StalenessRecord r = DeltaOf(b, log, fwd);
  EXPECT_EQ(r.delta, 2);
  EXPECT_EQ(r.mini_batch, 4);
  EXPECT_EQ(r.pass, Pass::kBackward);
}

TEST(DeltaOfTest, Errors) {
  UpdateLog log(1);
  ScheduleEvent b{StageId{0}, 8, 10, Pass::kBackward, BatchRef{4, std::nullopt}};
  try {
    DeltaOf(b, log, {});
    FAIL();
  } catch (const SimError& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownVersion);
  }
  b.pass = Pass::kForward;
  EXPECT_THROW(DeltaOf(b, log, {{{0, 4}, 0}}), SimError);
}

}  // namespace
}  // namespace pipesim
