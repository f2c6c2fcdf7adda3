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

#include "pdsim/control_plane.h"

#include <map>
#include <set>

#include <gtest/gtest.h>

#include "test_util.h"

namespace pdsim {
namespace {

class FakeObserver : public ControlPlaneObserver {
 public:
  void OnInstanceStarted(const GroupRecord&, const MemberRecord& m) override {
    started.push_back(m.id);
  }
  void OnViewPropagated(const GroupRecord& view) override {
    propagated.emplace_back(view.name(), view.meta_version);
  }
  void OnInstanceFaulted(InstanceId id) override {
    // Protection: everything the instance held is terminated.
    terminated += in_flight[id];
    in_flight[id] = 0;
    faulted.push_back(id);
  }
  void OnInstanceRecovered(InstanceId id) override { recovered.push_back(id); }
  void OnInstanceReleased(InstanceId id) override { released.push_back(id); }
  std::size_t InFlight(InstanceId id) const override {
    auto it = in_flight.find(id);
    return it == in_flight.end() ? 0 : it->second;
  }

  std::vector<InstanceId> started;
  std::vector<std::pair<std::string, std::uint64_t>> propagated;
  std::vector<InstanceId> faulted;
  std::vector<InstanceId> recovered;
  std::vector<InstanceId> released;
  std::map<InstanceId, std::size_t> in_flight;
  std::size_t terminated = 0;
};

GroupSpec Spec(std::string name, int p, int d) {
  GroupSpec s;
  s.name = std::move(name);
  s.scenarios = {"chat"};
  s.n_prefill = p;
  s.n_decode = d;
  return s;
}

struct Fixture {
  Simulator sim;
  FakeObserver observer;
  ControlPlane cp{sim, ControlPlaneOptions{}, RngStreams(1).Stream("cp"), &observer};
};

TEST(SetupGroupTest, HealthyAfterAllReports) {
  Fixture f;
  f.cp.AddFreeContainers(2);
  bool ok = false;
  f.cp.SetupGroup(Spec("g", 1, 1), [&](bool r) { ok = r; });
  EXPECT_EQ(f.cp.Group("g")->state, GroupState::kCollecting);
  f.sim.RunUntil(1000);
  ASSERT_TRUE(ok);
  const GroupRecord* g = f.cp.Group("g");
  EXPECT_EQ(g->state, GroupState::kHealthy);
  EXPECT_EQ(g->meta_version, 1u);
  EXPECT_EQ(g->RoutableCount(Role::kPrefill), 1);
  EXPECT_EQ(g->RoutableCount(Role::kDecode), 1);
  EXPECT_EQ(f.cp.View("g")->meta_version, 1u);
  EXPECT_TRUE(f.cp.EndpointsUnique());
  const auto& wf = f.cp.workflows().front();
  std::vector<std::string> steps;
  for (const auto& e : wf.entries) steps.push_back(e.step);
  EXPECT_EQ(steps, (std::vector<std::string>{"collect", "collected", "init",
                                             "connected", "load_model",
                                             "health_report", "confirm"}));
}

TEST(SetupGroupTest, SilentContainerAbortsAfterRetries) {
  Fixture f;
  f.cp.AddFreeContainers(1);
  Container silent;
  silent.never_reports = true;
  f.cp.AddContainer(silent);
  std::optional<bool> ok;
  f.cp.SetupGroup(Spec("g", 1, 1), [&](bool r) { ok = r; });
  f.sim.RunUntil(1000);
  ASSERT_TRUE(ok.has_value());
  EXPECT_FALSE(*ok);
  EXPECT_EQ(f.cp.Group("g"), nullptr);
  const auto& wf = f.cp.workflows().front();
  int retries = 0;
  for (const auto& e : wf.entries) retries += e.step == "collect_retry";
  EXPECT_EQ(retries, f.cp.options().collect_retries);
  EXPECT_EQ(wf.entries.back().step, "abort");
  const double threshold =
      (f.cp.options().collect_retries + 1) * f.cp.options().collect_timeout;
  EXPECT_NEAR(wf.finished_at, threshold, 1e-9);
  // The healthy container returns to the pool, the silent one is discarded.
  EXPECT_EQ(f.cp.free_containers(), 1u);
}

TEST(SetupGroupTest, NeedsContainers) {
  Fixture f;
  f.cp.AddFreeContainers(1);
  EXPECT_PDSIM_ERROR(f.cp.SetupGroup(Spec("g", 1, 1)), ErrorCode::kInvalidState);
}

TEST(AddMembersTest, ViewGrowsAtPropagationNotBefore) {
  Fixture f;
  f.cp.BootstrapGroup(Spec("g", 1, 1));
  f.cp.AddFreeContainers(1);
  bool ok = false;
  f.cp.AddMembers("g", 1, Role::kDecode, [&](bool r) { ok = r; });
  // Run until the registry changes, then check the view still lags.
  double registry_time = -1;
  while (registry_time < 0) {
    f.sim.RunUntil(f.sim.now() + 0.01);
    if (f.cp.Group("g")->RoutableCount(Role::kDecode) == 2) registry_time = f.sim.now();
    ASSERT_LT(f.sim.now(), 1000);
  }
  ASSERT_TRUE(ok);
  EXPECT_EQ(f.cp.View("g")->RoutableCount(Role::kDecode), 1);
  f.sim.RunUntil(registry_time + f.cp.options().propagation_delay);
  EXPECT_EQ(f.cp.View("g")->RoutableCount(Role::kDecode), 2);
  EXPECT_EQ(f.cp.containers_added(), 1);
}

TEST(AddMembersTest, ConnectFailureLeavesGroupUnchanged) {
  Fixture f;
  f.cp.BootstrapGroup(Spec("g", 1, 1));
  Container bad;
  bad.connect_fails = true;
  f.cp.AddContainer(bad);
  std::optional<bool> ok;
  f.cp.AddMembers("g", 1, Role::kPrefill, [&](bool r) { ok = r; });
  f.sim.RunUntil(1000);
  ASSERT_TRUE(ok.has_value());
  EXPECT_FALSE(*ok);
  EXPECT_EQ(f.cp.Group("g")->RoutableCount(Role::kPrefill), 1);
  EXPECT_EQ(f.cp.Group("g")->meta_version, 1u);
  EXPECT_EQ(f.cp.free_containers(), 0u);
}

TEST(AddMembersTest, InactiveGroupRejected) {
  Fixture f;
  f.cp.AddFreeContainers(4);
  f.cp.BootstrapGroup(Spec("g", 1, 1));
  f.cp.RollingUpgrade({"g"});
  f.sim.RunUntil(0.01);
  EXPECT_EQ(f.cp.Group("g")->state, GroupState::kDraining);
  EXPECT_PDSIM_ERROR(f.cp.AddMembers("g", 1, Role::kDecode), ErrorCode::kInvalidState);
  EXPECT_PDSIM_ERROR(f.cp.AddMembers("nope", 1, Role::kDecode),
                     ErrorCode::kInvalidArgument);
}

TEST(RemoveMembersTest, StopsRoutingAtPropagationAndDrains) {
  Fixture f;
  const GroupRecord& g = f.cp.BootstrapGroup(Spec("g", 2, 1));
  const InstanceId victim = g.Routable(Role::kPrefill).back();
  f.observer.in_flight[victim] = 2;
  bool done = false;
  f.cp.RemoveMembers("g", {victim}, [&](bool) { done = true; });
  EXPECT_FALSE(f.cp.Group("g")->Find(victim)->routable);
  EXPECT_TRUE(f.cp.View("g")->Find(victim)->routable);
  f.sim.RunUntil(f.cp.options().propagation_delay);
  EXPECT_FALSE(f.cp.View("g")->Find(victim)->routable);
  f.sim.RunUntil(10);
  EXPECT_FALSE(done);  // in-flight work still running
  f.observer.in_flight[victim] = 0;
  f.sim.RunUntil(20);
  EXPECT_TRUE(done);
  EXPECT_EQ(f.cp.Group("g")->Find(victim), nullptr);
  EXPECT_EQ(f.observer.released, (std::vector<InstanceId>{victim}));
  EXPECT_EQ(f.cp.free_containers(), 1u);
}

TEST(RemoveMembersTest, SoleDecodeRefused) {
  Fixture f;
  const GroupRecord& g = f.cp.BootstrapGroup(Spec("g", 2, 1));
  EXPECT_PDSIM_ERROR(f.cp.RemoveMembers("g", g.Routable(Role::kDecode)),
                     ErrorCode::kInvalidState);
  EXPECT_PDSIM_ERROR(f.cp.RemoveMembers("g", g.Routable(Role::kPrefill)),
                     ErrorCode::kInvalidState);
}

TEST(RemoveMembersTest, IdleDrainReleasesRightAfterPropagation) {
  Fixture f;
  const GroupRecord& g = f.cp.BootstrapGroup(Spec("g", 2, 1));
  const InstanceId victim = g.Routable(Role::kPrefill).front();
  f.cp.RemoveMembers("g", {victim});
  f.sim.RunUntil(f.cp.options().propagation_delay);
  EXPECT_EQ(f.cp.Group("g")->Find(victim), nullptr);
}

TEST(PlanRatioTest, Examples) {
  const ClusterShape current{2, 2, 1, 1};
  const RatioPlan swap = PlanRatioAdjustment(current, {1, 3, 1, 1}, 0, true);
  ASSERT_TRUE(swap.feasible);
  EXPECT_EQ(swap.steps, (std::vector<RatioStep>{{RatioStep::Kind::kRemove, Role::kPrefill},
                                                {RatioStep::Kind::kAdd, Role::kDecode}}));
  EXPECT_TRUE(PlanRatioAdjustment(current, current, 0, true).steps.empty());
  EXPECT_FALSE(PlanRatioAdjustment(current, {2, 4, 1, 1}, 1, false).feasible);
  EXPECT_TRUE(PlanRatioAdjustment(current, {2, 4, 1, 1}, 2, false).feasible);
}

TEST(RecommendRoleTest, MonitorRule) {
  const MonitorSample before{1.0, 0.30};
  EXPECT_EQ(RecommendRole(before, {1.5, 0.20}), Role::kDecode);
  EXPECT_EQ(RecommendRole(before, {1.5, 0.40}), Role::kPrefill);
  EXPECT_EQ(RecommendRole(before, {1.0, 0.40}), std::nullopt);
}

TEST(AdjustRatioTest, ExecutesSwapPlan) {
  Fixture f;
  f.cp.BootstrapGroup(Spec("g", 2, 2));
  bool ok = false;
  const RatioPlan plan = f.cp.AdjustRatio("g", {1, 3, 1, 1}, true, [&](bool r) { ok = r; });
  EXPECT_EQ(plan.steps.size(), 2u);
  f.sim.RunUntil(2000);
  EXPECT_TRUE(ok);
  EXPECT_EQ(f.cp.Group("g")->Shape().n_prefill, 1);
  EXPECT_EQ(f.cp.Group("g")->Shape().n_decode, 3);
}

TEST(AdjustRatioTest, MonitorAddsDecode) {
  Fixture f;
  f.cp.BootstrapGroup(Spec("g", 1, 1));
  f.cp.AddFreeContainers(1);
  const RatioPlan plan = f.cp.AdjustRatioFromMonitor("g", {1.0, 0.3}, {1.4, 0.2});
  EXPECT_EQ(plan.steps, (std::vector<RatioStep>{{RatioStep::Kind::kAdd, Role::kDecode}}));
  f.sim.RunUntil(2000);
  EXPECT_EQ(f.cp.Group("g")->Shape().n_decode, 2);
}

TEST(DetectAndRecoverTest, DecodeFaultProtectsAndSubstitutes) {
  Fixture f;
  f.cp.AddFreeContainers(1);
  const GroupRecord& g = f.cp.BootstrapGroup(Spec("g", 1, 2));
  const InstanceId victim = g.Routable(Role::kDecode).front();
  f.observer.in_flight[victim] = 3;
  const RecoveryTranscript* t =
      f.cp.DetectAndRecover({victim, FaultLevel::kSubstituteRequired, 0.0, false});
  ASSERT_NE(t, nullptr);
  EXPECT_EQ(f.observer.terminated, 3u);
  EXPECT_FALSE(f.cp.Group("g")->Find(victim)->routable);
  EXPECT_EQ(f.cp.Group("g")->state, GroupState::kDegraded);
  f.sim.RunUntil(2000);
  EXPECT_TRUE(t->completed);
  EXPECT_EQ(t->containers_added, 1);
  EXPECT_EQ(f.cp.Group("g")->Find(victim), nullptr);
  EXPECT_EQ(f.cp.Group("g")->RoutableCount(Role::kDecode), 2);
  EXPECT_EQ(f.cp.Group("g")->state, GroupState::kHealthy);
  EXPECT_EQ(f.cp.View("g")->meta_version, f.cp.Group("g")->meta_version);
  // Second detection of the same fault is a no-op.
  EXPECT_EQ(f.cp.DetectAndRecover({victim, FaultLevel::kSubstituteRequired, 1.0, false}),
            nullptr);
}

TEST(DetectAndRecoverTest, NoFreeContainerAlerts) {
  Fixture f;
  const GroupRecord& g = f.cp.BootstrapGroup(Spec("g", 2, 1));
  const InstanceId victim = g.Routable(Role::kPrefill).front();
  const RecoveryTranscript* t =
      f.cp.DetectAndRecover({victim, FaultLevel::kSubstituteRequired, 0.0, false});
  ASSERT_NE(t, nullptr);
  EXPECT_TRUE(t->alert);
  EXPECT_EQ(f.cp.shortfall().at("g"), 1);
  EXPECT_EQ(f.cp.Group("g")->state, GroupState::kDegraded);
}

TEST(DetectAndRecoverTest, InPlaceResetKeepsMembership) {
  Fixture f;
  const GroupRecord& g = f.cp.BootstrapGroup(Spec("g", 1, 1));
  const InstanceId victim = g.Routable(Role::kPrefill).front();
  const std::uint64_t version = g.meta_version;
  const RecoveryTranscript* t =
      f.cp.DetectAndRecover({victim, FaultLevel::kRecoverableInPlace, 0.0, true});
  ASSERT_NE(t, nullptr);
  EXPECT_EQ(t->action, "in_place_reset");
  f.sim.RunUntil(f.cp.options().in_place_reset);
  EXPECT_TRUE(t->completed);
  EXPECT_EQ(f.observer.recovered, (std::vector<InstanceId>{victim}));
  EXPECT_EQ(f.cp.Group("g")->meta_version, version);
  EXPECT_EQ(f.cp.containers_added(), 0);
}

TEST(DetectAndRecoverTest, RemovedGroupIsNoOp) {
  Fixture f;
  f.cp.AddFreeContainers(2);
  const InstanceId member = f.cp.BootstrapGroup(Spec("g", 1, 1)).Routable(Role::kPrefill)[0];
  f.cp.RollingUpgrade({"g"});
  f.sim.RunUntil(0.01);
  EXPECT_EQ(f.cp.DetectAndRecover({member, FaultLevel::kSubstituteRequired, 0.0, false}),
            nullptr);
  EXPECT_EQ(f.cp.DetectAndRecover({9999, FaultLevel::kSubstituteRequired, 0.0, false}),
            nullptr);
}

TEST(HealthMonitoringTest, InjectedFaultIsDetectedByPoll) {
  Fixture f;
  f.cp.AddFreeContainers(1);
  const InstanceId victim = f.cp.BootstrapGroup(Spec("g", 1, 1)).Routable(Role::kDecode)[0];
  f.cp.StartHealthMonitoring();
  f.sim.RunUntil(12);
  f.cp.InjectFault(victim, FaultLevel::kSubstituteRequired);
  f.sim.RunUntil(12 + f.cp.options().detect_poll_interval);
  ASSERT_EQ(f.cp.recoveries().size(), 1u);
  EXPECT_EQ(f.cp.recoveries().front().fault.instance, victim);
}

TEST(HealthMonitoringTest, SilentFaultFoundThroughMissingReports) {
  Fixture f;
  f.cp.AddFreeContainers(1);
  const InstanceId victim = f.cp.BootstrapGroup(Spec("g", 1, 1)).Routable(Role::kPrefill)[0];
  f.cp.StartHealthMonitoring();
  f.cp.InjectFault(victim, FaultLevel::kSubstituteRequired, true);
  const auto& o = f.cp.options();
  f.sim.RunUntil(o.health_interval * o.miss_threshold - 1);
  EXPECT_TRUE(f.cp.recoveries().empty());
  f.sim.RunUntil(o.health_interval * (o.miss_threshold + 1) + o.detect_poll_interval);
  ASSERT_EQ(f.cp.recoveries().size(), 1u);
  EXPECT_EQ(f.cp.recoveries().front().fault.instance, victim);
}

TEST(HealthLedgerTest, MissingAfterThreshold) {
  HealthLedger ledger(10, 3);
  ledger.Report(1, 0);
  ledger.Report(2, 25);
  EXPECT_EQ(ledger.Status(1, 30), HealthStatus::kOk);
  EXPECT_EQ(ledger.Missing(31), (std::vector<InstanceId>{1}));
  ledger.MarkFault(2, 2);
  EXPECT_EQ(ledger.Status(2, 26), HealthStatus::kFault);
}

TEST(RollingUpgradeTest, GroupsUpgradeOneAtATime) {
  Fixture f;
  f.cp.BootstrapGroup(Spec("a", 1, 1));
  f.cp.BootstrapGroup(Spec("b", 1, 1));
  bool ok = false;
  f.cp.RollingUpgrade({"a", "b"}, [&](bool r) { ok = r; });
  double last = 0;
  while (!ok && f.sim.now() < 5000) {
    f.sim.RunUntil(f.sim.now() + 1);
    const bool a_up = f.cp.Group("a")->Active();
    const bool b_up = f.cp.Group("b")->Active();
    ASSERT_TRUE(a_up || b_up) << "both groups down at " << f.sim.now();
    last = f.sim.now();
  }
  EXPECT_TRUE(ok);
  EXPECT_GT(last, 0);
  EXPECT_GE(f.cp.Group("a")->meta_version, 3u);
  EXPECT_TRUE(f.cp.EndpointsUnique());
  EXPECT_EQ(f.cp.containers_added(), 0);
}

TEST(SnapshotTest, DumpsJson) {
  Fixture f;
  f.cp.BootstrapGroup(Spec("g", 1, 1));
  const std::string snap = f.cp.DumpSnapshot();
  EXPECT_NE(snap.find("\"g\""), std::string::npos);
  EXPECT_NE(snap.find("meta_version"), std::string::npos);
}

}  // namespace
}  // namespace pdsim
