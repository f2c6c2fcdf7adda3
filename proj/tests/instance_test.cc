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

#include "pdsim/instance.h"

#include <vector>

#include <gtest/gtest.h>

#include "test_util.h"

namespace pdsim {
namespace {

Request Req(RequestId id, std::string prefix = "", int prefix_len = 0,
            std::string scenario = "s") {
  Request r;
  r.id = id;
  r.scenario = std::move(scenario);
  r.prompt_len = 1024;
  r.prefix_id = std::move(prefix);
  r.prefix_len = prefix_len;
  r.output_len = 3;
  return r;
}

PerfProfile Profile(double benefit) {
  PerfProfile p;
  p.ttft_by_batch = LatencyTable({{1, 0.5}, {4, 1.0}});
  p.tpot_by_batch = LatencyTable({{1, 0.05}, {8, 0.06}});
  p.prefix_benefit = benefit;
  return p;
}

TEST(PrefillOfferTest, RejectModeAcceptsOnlyWhenIdle) {
  PrefillInstance p(1, "g", 1, PrefillMode::kReject, 1 << 20);
  const Request a = Req(1);
  const Request b = Req(2);
  EXPECT_EQ(p.Offer(a), OfferOutcome::kAccepted);
  EXPECT_EQ(p.Offer(b), OfferOutcome::kRejected);
  const Request* batch[] = {&a};
  p.ExecuteBatch(batch, Profile(1.0), 0, 0.0);
  EXPECT_TRUE(p.busy());
  EXPECT_EQ(p.Offer(b), OfferOutcome::kRejected);
  EXPECT_EQ(p.rejected(), 2u);
  EXPECT_TRUE(p.local_queue().empty());
}

TEST(PrefillOfferTest, LocalQueueModeQueuesWhileBusy) {
  PrefillInstance p(1, "g", 2, PrefillMode::kLocalQueue, 1 << 20);
  std::map<RequestId, Request> reqs;
  for (RequestId i = 1; i <= 4; ++i) reqs[i] = Req(i, "", 0, i == 3 ? "t" : "s");
  for (RequestId i = 1; i <= 4; ++i) {
    EXPECT_EQ(p.Offer(reqs[i]), OfferOutcome::kAccepted);
  }
  auto lookup = [&](RequestId id) -> const Request& { return reqs.at(id); };
  // Same-scenario run at the head: 1, 2 (3 is another scenario).
  const auto first = p.TakeQueuedBatch(lookup);
  EXPECT_EQ(first, (std::vector<RequestId>{1, 2}));
  EXPECT_EQ(p.free_slots(), 0);
  EXPECT_TRUE(p.TakeQueuedBatch(lookup).empty());
  p.ReleaseSlot(1);
  p.ReleaseSlot(2);
  EXPECT_EQ(p.TakeQueuedBatch(lookup), (std::vector<RequestId>{3}));
  EXPECT_TRUE(p.Withdraw(4));
  EXPECT_FALSE(p.Withdraw(4));
}

TEST(PrefillExecuteTest, PrefixHitScalesLatency) {
  PrefillInstance p(1, "g", 4, PrefillMode::kReject, 1 << 20);
  const Request a = Req(1, "sys", 16);
  const Request b = Req(2, "sys", 16);
  const Request* batch_a[] = {&a};
  const Request* batch_b[] = {&b};
  const PerfProfile profile = Profile(0.6);
  p.Offer(a);
  const PrefillBatch miss = p.ExecuteBatch(batch_a, profile, 10, 0.0);
  EXPECT_DOUBLE_EQ(miss.latency, 0.5);
  EXPECT_EQ(miss.misses, 1);
  p.CompleteBatch(0.5);
  p.ReleaseSlot(1);
  p.Offer(b);
  const PrefillBatch hit = p.ExecuteBatch(batch_b, profile, 10, 0.5);
  EXPECT_DOUBLE_EQ(hit.latency, 0.3);
  EXPECT_EQ(hit.hits, 1);
  p.CompleteBatch(0.8);
  EXPECT_DOUBLE_EQ(p.busy_seconds(), 0.8);
}

TEST(PrefillExecuteTest, BatchGuards) {
  PrefillInstance p(1, "g", 1, PrefillMode::kReject, 0);
  const Request a = Req(1);
  const Request b = Req(2);
  const Request* none[] = {&a};
  EXPECT_PDSIM_ERROR(p.ExecuteBatch(none, Profile(1.0), 0, 0.0),
                     ErrorCode::kInvalidState);
  const Request* two[] = {&a, &b};
  EXPECT_PDSIM_ERROR(p.ExecuteBatch(two, Profile(1.0), 0, 0.0),
                     ErrorCode::kInvalidArgument);
  EXPECT_PDSIM_ERROR(p.CompleteBatch(0.0), ErrorCode::kInvalidState);
  EXPECT_PDSIM_ERROR(PrefillInstance(2, "g", 0, PrefillMode::kReject, 0),
                     ErrorCode::kInvalidArgument);
}

TEST(PrefixCacheTest, LeastRecentlyUsedEviction) {
  PrefixCache cache(300);
  EXPECT_FALSE(cache.Access("a", 1, 100, 0.0));
  EXPECT_FALSE(cache.Access("b", 1, 100, 1.0));
  EXPECT_FALSE(cache.Access("c", 1, 100, 2.0));
  EXPECT_TRUE(cache.Access("a", 1, 100, 3.0));
  EXPECT_FALSE(cache.Access("d", 1, 100, 4.0));
  EXPECT_FALSE(cache.Contains("b"));
  EXPECT_TRUE(cache.Contains("a"));
  EXPECT_LE(cache.used_bytes(), cache.budget());
  EXPECT_EQ(cache.evictions(), 1u);
  EXPECT_FALSE(cache.Access("huge", 1, 301, 5.0));
  EXPECT_FALSE(cache.Contains("huge"));
  EXPECT_EQ(cache.size(), 3u);
}

TEST(PrefixCacheTest, RandomAccessesStayWithinBudget) {
  PrefixCache cache(1000);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 5000; ++i) {
    cache.Access("p" + std::to_string(rng() % 40), 1, 50 + rng() % 400, i);
    ASSERT_LE(cache.used_bytes(), cache.budget());
  }
  EXPECT_EQ(cache.hits() + cache.misses(), 5000u);
}

void AdmitArrived(DecodeInstance& d, RequestId id, int output) {
  ASSERT_EQ(d.Admit(id, output), AdmitOutcome::kRunning);
  d.OnKvArrived(id);
}

TEST(DecodeAdmitTest, RunningQueuedRefused) {
  DecodeInstance d(1, "g", 2, 1);
  AdmitArrived(d, 1, 5);
  AdmitArrived(d, 2, 5);
  EXPECT_EQ(d.JoinIfIdle().size(), 2u);
  EXPECT_EQ(d.Admit(3, 5), AdmitOutcome::kQueued);
  EXPECT_EQ(d.Admit(4, 5), AdmitOutcome::kRefused);
  EXPECT_EQ(d.refused(), 1u);
  EXPECT_EQ(d.load(), 3);
  EXPECT_PDSIM_ERROR(d.OnKvArrived(99), ErrorCode::kInvalidState);
}

TEST(DecodeIterationTest, CompletesAfterOutputLenIterations) {
  DecodeInstance d(1, "g", 8, 1);
  AdmitArrived(d, 1, 3);
  d.JoinIfIdle();
  const double tpot = 0.05;
  double t = 0;
  std::vector<RequestId> done;
  while (done.empty()) {
    t += tpot;
    done = d.CompleteIteration().completed;
  }
  EXPECT_EQ(done, (std::vector<RequestId>{1}));
  EXPECT_NEAR(t, 0.15, 1e-12);
  EXPECT_EQ(d.iterations(), 3u);
}

TEST(DecodeIterationTest, QueuedKvJoinsAtTheFreedBoundary) {
  DecodeInstance d(1, "g", 1, 1);
  AdmitArrived(d, 1, 1);
  d.JoinIfIdle();
  EXPECT_EQ(d.Admit(2, 2), AdmitOutcome::kQueued);
  d.OnKvArrived(2);
  const IterationResult r = d.CompleteIteration();
  EXPECT_EQ(r.completed, (std::vector<RequestId>{1}));
  EXPECT_EQ(r.joined, (std::vector<RequestId>{2}));
  EXPECT_EQ(d.RunningIds(), (std::vector<RequestId>{2}));
}

TEST(DecodeIterationTest, UnarrivedKvWaits) {
  DecodeInstance d(1, "g", 4, 1);
  AdmitArrived(d, 1, 2);
  d.JoinIfIdle();
  ASSERT_EQ(d.Admit(2, 2), AdmitOutcome::kRunning);
  EXPECT_TRUE(d.CompleteIteration().joined.empty());
  d.OnKvArrived(2);
  EXPECT_EQ(d.CompleteIteration().joined, (std::vector<RequestId>{2}));
  EXPECT_TRUE(d.Remove(2));
  EXPECT_FALSE(d.Remove(2));
  EXPECT_EQ(d.load(), 0);
}

TEST(DecodeAdmitTest, FaultedRefusesEverything) {
  DecodeInstance d(1, "g", 4, 1);
  d.set_faulted(true);
  EXPECT_EQ(d.Admit(1, 1), AdmitOutcome::kRefused);
  EXPECT_EQ(AdmitOutcomeName(AdmitOutcome::kQueued), "queued");
}

}  // namespace
}  // namespace pdsim
