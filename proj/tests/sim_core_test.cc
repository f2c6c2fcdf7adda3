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

#include "pdsim/sim_core.h"

#include <algorithm>
#include <random>
#include <sstream>
#include <utility>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.h"

namespace pdsim {
namespace {

TEST(SimulatorTest, SameTimeEventsFireInScheduleOrder) {
  Simulator sim;
  std::vector<std::string> fired;
  sim.Schedule(5.0, "a", [&] { fired.push_back("a"); });
  sim.Schedule(5.0, "b", [&] { fired.push_back("b"); });
  sim.RunUntil(10.0);
  EXPECT_EQ(fired, (std::vector<std::string>{"a", "b"}));
  EXPECT_DOUBLE_EQ(sim.now(), 10.0);
}

TEST(SimulatorTest, SchedulingInThePastFails) {
  Simulator sim;
  sim.RunUntil(10.0);
  EXPECT_PDSIM_ERROR(sim.Schedule(3.0, "x", [] {}), ErrorCode::kTimeTravel);
  EXPECT_PDSIM_ERROR(sim.RunUntil(9.0), ErrorCode::kTimeTravel);
}

TEST(SimulatorTest, EmptyQueueAdvancesClock) {
  Simulator sim;
  const RunStats stats = sim.RunUntil(100.0);
  EXPECT_EQ(stats.dispatched, 0u);
  EXPECT_DOUBLE_EQ(sim.now(), 100.0);
}

TEST(SimulatorTest, BoundaryEventFiresAndLaterWaits) {
  Simulator sim;
  int fired = 0;
  sim.Schedule(10.0, "edge", [&] { ++fired; });
  sim.Schedule(10.5, "late", [&] { ++fired; });
  sim.RunUntil(10.0);
  EXPECT_EQ(fired, 1);
  EXPECT_EQ(sim.pending(), 1u);
}

TEST(SimulatorTest, CancelPreventsDispatch) {
  Simulator sim;
  int fired = 0;
  EventHandle h = sim.Schedule(1.0, "x", [&] { ++fired; });
  EXPECT_TRUE(sim.Cancel(h));
  EXPECT_FALSE(sim.Cancel(h));
  EXPECT_FALSE(sim.Cancel(EventHandle()));
  sim.RunUntil(2.0);
  EXPECT_EQ(fired, 0);
  EXPECT_EQ(sim.stats().cancelled, 1u);
}

TEST(SimulatorTest, CallbacksMayScheduleAtNow) {
  Simulator sim;
  std::vector<double> times;
  sim.Schedule(1.0, "outer", [&] {
    times.push_back(sim.now());
    sim.ScheduleAfter(0.0, "inner", [&] { times.push_back(sim.now()); });
    sim.ScheduleAfter(0.5, "later", [&] { times.push_back(sim.now()); });
  });
  sim.RunUntil(5.0);
  EXPECT_EQ(times, (std::vector<double>{1.0, 1.0, 1.5}));
}

// Random schedules against a sorted (time, insertion) oracle.
TEST(SimulatorTest, RandomScheduleMatchesSortedOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Simulator sim;
    std::vector<std::pair<double, int>> expected;
    std::vector<std::pair<double, int>> fired;
    std::uniform_int_distribution<int> tick(0, 20);
    for (int i = 0; i < 200; ++i) {
      const double t = tick(rng) * 0.5;
      expected.emplace_back(t, i);
      sim.Schedule(t, "e", [&, t, i] { fired.emplace_back(t, i); });
    }
    std::stable_sort(expected.begin(), expected.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    const RunStats stats = sim.RunUntil(20.0);
    EXPECT_EQ(fired, expected);
    EXPECT_EQ(stats.order_violations, 0u);
  }
}

TEST(SimulatorTest, EventLogIsDeterministic) {
  auto run = [] {
    std::ostringstream log;
    Simulator sim;
    sim.set_event_log(&log);
    for (int i = 0; i < 10; ++i) sim.Schedule(i * 0.25, "tick", [] {});
    sim.RunUntil(5.0);
    return log.str();
  };
  const std::string first = run();
  EXPECT_EQ(first, run());
  EXPECT_EQ(std::count(first.begin(), first.end(), '\n'), 10);
}

TEST(RngStreamsTest, NamedStreamsAreIndependentAndStable) {
  const RngStreams a(42);
  const RngStreams b(42);
  Rng x = a.Stream("workload");
  Rng y = b.Stream("workload");
  Rng z = a.Stream("transfer");
  for (int i = 0; i < 10; ++i) {
    const auto vx = x();
    EXPECT_EQ(vx, y());
    EXPECT_NE(vx, z());
  }
  Rng other_seed = RngStreams(43).Stream("workload");
  EXPECT_NE(a.Stream("workload")(), other_seed());
}

TEST(RngStreamsTest, UniformUnitRange) {
  Rng rng = RngStreams(1).Stream("u");
  double sum = 0;
  for (int i = 0; i < 100000; ++i) {
    const double u = UniformUnit(rng);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  // sd of the mean is sqrt(1/12 / 1e5) ~ 0.0009.
  EXPECT_NEAR(sum / 100000, 0.5, 0.005);
}

}  // namespace
}  // namespace pdsim
