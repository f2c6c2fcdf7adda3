/* Copyright 2026 The pdsim Authors. All Rights Reserved.

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

#include "pdsim/perf_model.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "test_util.h"

namespace pdsim {
namespace {

PerfProfile Profile(std::map<int, double> ttft, std::map<int, double> tpot,
                    double r_pre = 1.0, double g = 1.0, double xi = 0.0) {
  PerfProfile p;
  p.ttft_by_batch = LatencyTable(std::move(ttft));
  p.tpot_by_batch = LatencyTable(std::move(tpot));
  p.prefix_benefit = r_pre;
  p.mean_generated_tokens = g;
  p.transfer_time = xi;
  return p;
}

ClusterShape Shape(int np, int nd, int bp, int bd) {
  ClusterShape s;
  s.n_prefill = np;
  s.n_decode = nd;
  s.batch_prefill = bp;
  s.batch_decode = bd;
  return s;
}

// Exhaustive split search written independently of the library.
std::pair<int, int> BruteForceSplit(double cap_p, double cap_d, int total) {
  int best_np = -1;
  double best = std::numeric_limits<double>::infinity();
  for (int np = 1; np < total; ++np) {
    const int nd = total - np;
    const double mismatch = std::abs(np * cap_p - nd * cap_d);
    // Strictly better wins; on a tie the smaller n_p (more decoding) stays.
    if (best_np < 0 || mismatch < best - 1e-12 * std::max(1.0, best)) {
      best = mismatch;
      best_np = np;
    }
  }
  return {best_np, total - best_np};
}

TEST(PhaseLatencyTest, PrefillExamples) {
  EXPECT_DOUBLE_EQ(PrefillPhaseLatency(Profile({{1, 0.5}}, {{1, 0.01}}), 1), 0.5);
  EXPECT_DOUBLE_EQ(
      PrefillPhaseLatency(Profile({{1, 0.5}, {4, 1.0}}, {{1, 0.01}}, 0.6), 4),
      0.6);
  EXPECT_NEAR(PrefillPhaseLatency(Profile({{1, 0.5}, {4, 1.0}}, {{1, 0.01}}), 2),
              0.5 + 0.5 / 3.0, 1e-12);
}

TEST(PhaseLatencyTest, PrefillOutOfRange) {
  const PerfProfile p = Profile({{2, 0.5}, {4, 1.0}}, {{1, 0.01}});
  EXPECT_PDSIM_ERROR(PrefillPhaseLatency(p, 1), ErrorCode::kBatchOutOfRange);
  EXPECT_PDSIM_ERROR(PrefillPhaseLatency(p, 5), ErrorCode::kBatchOutOfRange);
}

TEST(PhaseLatencyTest, DecodeExamples) {
  EXPECT_DOUBLE_EQ(DecodePhaseLatency(Profile({{1, 1}}, {{8, 0.05}}), 8), 0.05);
  EXPECT_NEAR(
      DecodePhaseLatency(Profile({{1, 1}}, {{8, 0.05}}, 1.0, 100, 0.02), 8),
      5.02, 1e-12);
  EXPECT_PDSIM_ERROR(
      DecodePhaseLatency(Profile({{1, 1}}, {{8, 0.05}}, 1.0, 0, 0.02), 8),
      ErrorCode::kInvalidArgument);
}

TEST(PerfProfileTest, RejectsBadTables) {
  EXPECT_PDSIM_ERROR(Profile({{1, 1.0}, {2, 0.5}}, {{1, 0.1}}).Validate(),
                     ErrorCode::kInvalidArgument);
  EXPECT_PDSIM_ERROR(Profile({{1, 1.0}}, {{1, 0.1}}, 0.0).Validate(),
                     ErrorCode::kInvalidArgument);
  EXPECT_PDSIM_ERROR(Profile({{1, 1.0}}, {{1, 0.1}}, 1.5).Validate(),
                     ErrorCode::kInvalidArgument);
  EXPECT_PDSIM_ERROR(Profile({{1, 1.0}}, {{1, 0.1}}, 1.0, 1.0, -1).Validate(),
                     ErrorCode::kInvalidArgument);
}

TEST(ClusterThroughputTest, Examples) {
  const ThroughputEstimate zero =
      ClusterThroughputFromLatencies(1.0, 1.0, Shape(3, 2, 4, 8), 0.0);
  EXPECT_EQ(zero.per_instance_rps, 0.0);
  EXPECT_EQ(zero.bottleneck, Bottleneck::kTraffic);

  const ThroughputEstimate mixed =
      ClusterThroughputFromLatencies(1.0, 2.0, Shape(2, 3, 4, 8), 100.0);
  EXPECT_NEAR(mixed.per_instance_rps, 1.6, 1e-12);
  EXPECT_EQ(mixed.bottleneck, Bottleneck::kPrefill);
  EXPECT_DOUBLE_EQ(mixed.e2e, mixed.t_p + mixed.t_d);

  const ThroughputEstimate tie =
      ClusterThroughputFromLatencies(1.0, 1.0, Shape(1, 1, 1, 1), 1.0);
  EXPECT_DOUBLE_EQ(tie.per_instance_rps, 0.5);
  EXPECT_EQ(tie.bottleneck, Bottleneck::kTraffic);

  const ThroughputEstimate pd_tie =
      ClusterThroughputFromLatencies(1.0, 1.0, Shape(1, 1, 1, 1), 5.0);
  EXPECT_EQ(pd_tie.bottleneck, Bottleneck::kPrefill);
}

TEST(ClusterThroughputTest, ProfileFormUsesPhaseLatencies) {
  const PerfProfile p =
      Profile({{1, 0.4}, {4, 1.0}}, {{1, 0.02}, {8, 0.05}}, 0.8, 50, 0.01);
  const ThroughputEstimate e = ClusterThroughput(p, Shape(2, 3, 4, 8), 1e6);
  const double t_p = 1.0 * 0.8;
  const double t_d = 0.01 + 0.05 * 50;
  EXPECT_DOUBLE_EQ(e.t_p, t_p);
  EXPECT_DOUBLE_EQ(e.t_d, t_d);
  EXPECT_NEAR(e.per_instance_rps, std::min(2 * 4 / t_p, 3 * 8 / t_d) / 5.0,
              1e-12);
}

TEST(ClusterThroughputTest, MonotoneInTrafficAndCounts) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> lat(0.05, 5.0);
  std::uniform_int_distribution<int> count(1, 12);
  for (int trial = 0; trial < 500; ++trial) {
    const double t_p = lat(rng);
    const double t_d = lat(rng);
    const ClusterShape s = Shape(count(rng), count(rng), count(rng), count(rng));
    const double traffic = lat(rng) * 10;
    const double base =
        ClusterThroughputFromLatencies(t_p, t_d, s, traffic).per_instance_rps;
    const double more_traffic =
        ClusterThroughputFromLatencies(t_p, t_d, s, traffic * 1.5)
            .per_instance_rps;
    EXPECT_GE(more_traffic, base);
    // The numerator never shrinks when either pool grows.
    ClusterShape bigger_p = s;
    ++bigger_p.n_prefill;
    ClusterShape bigger_d = s;
    ++bigger_d.n_decode;
    const int n = s.n_prefill + s.n_decode;
    EXPECT_GE(ClusterThroughputFromLatencies(t_p, t_d, bigger_p, traffic)
                      .per_instance_rps * (n + 1),
              base * n - 1e-9);
    EXPECT_GE(ClusterThroughputFromLatencies(t_p, t_d, bigger_d, traffic)
                      .per_instance_rps * (n + 1),
              base * n - 1e-9);
  }
}

TEST(ClusterThroughputTest, GrowingBottleneckSideRaisesNumerator) {
  // Prefill-bound: adding prefills raises the served rate until the label
  // changes.
  ClusterShape s = Shape(1, 10, 1, 8);
  double served = 0.0;
  Bottleneck label = Bottleneck::kPrefill;
  while (label == Bottleneck::kPrefill) {
    const ThroughputEstimate e = ClusterThroughputFromLatencies(1.0, 2.0, s, 30);
    label = e.bottleneck;
    const double numerator =
        e.per_instance_rps * (s.n_prefill + s.n_decode);
    if (label == Bottleneck::kPrefill) {
      EXPECT_GT(numerator, served);
    }
    served = numerator;
    ++s.n_prefill;
  }
  EXPECT_NE(label, Bottleneck::kPrefill);
}

TEST(OptimalPdRatioTest, Examples) {
  ClusterShape sym = OptimalPdRatioFromLatencies(1.0, 2.0, 1, 2, 4);
  EXPECT_EQ(sym.n_prefill, 2);
  EXPECT_EQ(sym.n_decode, 2);

  ClusterShape skew = OptimalPdRatioFromLatencies(1.0, 4.0, 1, 2, 6);
  EXPECT_EQ(skew.n_prefill, 2);
  EXPECT_EQ(skew.n_decode, 4);

  ClusterShape edge = OptimalPdRatioFromLatencies(1.0, 1.0, 10, 1, 4);
  EXPECT_EQ(edge.n_prefill, 1);
  EXPECT_EQ(edge.n_decode, 3);

  EXPECT_PDSIM_ERROR(OptimalPdRatioFromLatencies(1.0, 1.0, 1, 1, 1),
                     ErrorCode::kInvalidArgument);
}

TEST(OptimalPdRatioTest, TieGoesToMoreDecoding) {
  // Capabilities 1 and 1 with 3 instances: splits (1,2) and (2,1) both
  // mismatch by 1.
  ClusterShape s = OptimalPdRatioFromLatencies(1.0, 1.0, 1, 1, 3);
  EXPECT_EQ(s.n_prefill, 1);
  EXPECT_EQ(s.n_decode, 2);
}

TEST(OptimalPdRatioTest, MatchesExhaustiveSearch) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> lat(0.01, 10.0);
  std::uniform_int_distribution<int> batch(1, 64);
  std::uniform_int_distribution<int> total(2, 64);
  for (int trial = 0; trial < 2000; ++trial) {
    const double t_p = lat(rng);
    const double t_d = lat(rng);
    const int bp = batch(rng);
    const int bd = batch(rng);
    const int n = total(rng);
    const ClusterShape got = OptimalPdRatioFromLatencies(t_p, t_d, bp, bd, n);
    const auto [np, nd] = BruteForceSplit(bp / t_p, bd / t_d, n);
    EXPECT_EQ(got.n_prefill, np) << "trial " << trial;
    EXPECT_EQ(got.n_decode, nd);
    EXPECT_EQ(got.batch_prefill, bp);
    EXPECT_EQ(got.batch_decode, bd);
  }
}

TEST(OptimalPdRatioTest, ScaleInvariant) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> lat(0.01, 10.0);
  std::uniform_int_distribution<int> total(2, 40);
  for (int trial = 0; trial < 500; ++trial) {
    const double t_p = lat(rng);
    const double t_d = lat(rng);
    const int n = total(rng);
    const ClusterShape a = OptimalPdRatioFromLatencies(t_p, t_d, 4, 16, n);
    const ClusterShape b =
        OptimalPdRatioFromLatencies(t_p * 4.0, t_d * 4.0, 4, 16, n);
    EXPECT_EQ(a.n_prefill, b.n_prefill);
  }
}

TEST(OptimalPdRatioTest, ProfileForm) {
  const PerfProfile p = Profile({{1, 1.0}}, {{2, 0.04}}, 1.0, 100.0);
  const ClusterShape s = OptimalPdRatio(p, 1, 2, 6);
  EXPECT_EQ(s.n_prefill, 2);
  EXPECT_EQ(s.n_decode, 4);
}

TEST(RequiredPrefillCountTest, Examples) {
  EXPECT_EQ(RequiredPrefillCountFromLatency(1.0, 4, 4.0), 1);
  EXPECT_EQ(RequiredPrefillCountFromLatency(1.0, 4, 9.0), 3);
  EXPECT_EQ(RequiredPrefillCountFromLatency(2.0, 1, 0.5), 1);
}

TEST(RequiredPrefillCountTest, SmallestSufficient) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> lat(0.05, 4.0);
  std::uniform_real_distribution<double> traffic(0.1, 500.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const double t_p = lat(rng);
    const int bp = 1 + static_cast<int>(rng() % 16);
    const double it = traffic(rng);
    const int n = RequiredPrefillCountFromLatency(t_p, bp, it);
    EXPECT_GE(n * bp / t_p, it * (1 - 1e-12));
    if (n > 1) {
      EXPECT_LT((n - 1) * bp / t_p, it);
    }
  }
}

TEST(KvCacheSizeTest, Examples) {
  EXPECT_EQ(KvCacheSizeBytes(1, 12288, 1, 96, 2), 4718592u);
  const double mib = 4718592.0 / (1024.0 * 1024.0);
  EXPECT_NEAR(mib, 4.5, 4.5 * 0.05);
  const double gib =
      static_cast<double>(KvCacheSizeBytes(1, 12288, 1024, 96, 2)) /
      (1024.0 * 1024.0 * 1024.0);
  EXPECT_NEAR(gib, 4.5, 4.5 * 0.05);
  EXPECT_EQ(KvCacheSizeBytes(1, 1, 1, 1, 1), 2u);
}

TEST(KvCacheSizeTest, LinearInEachArgument) {
  const std::uint64_t base = KvCacheSizeBytes(3, 64, 10, 4, 2);
  EXPECT_EQ(KvCacheSizeBytes(6, 64, 10, 4, 2), 2 * base);
  EXPECT_EQ(KvCacheSizeBytes(3, 128, 10, 4, 2), 2 * base);
  EXPECT_EQ(KvCacheSizeBytes(3, 64, 30, 4, 2), 3 * base);
  EXPECT_EQ(KvCacheSizeBytes(3, 64, 10, 12, 2), 3 * base);
  EXPECT_EQ(KvCacheSizeBytes(3, 64, 10, 4, 4), 2 * base);
}

}  // namespace
}  // namespace pdsim
