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

// Group registry and orchestration workflows: P/D group setup, dynamic
// membership, ratio adjustment plans, health reporting, fault detection and
// single-substitute recovery, rolling upgrade.
//
// The registry is authoritative. Every membership change bumps the group's
// meta_version and lands in the instance-local view after the propagation
// delay; routing decisions are only ever made from that view.

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pdsim/instance.h"
#include "pdsim/perf_model.h"
#include "pdsim/sim_core.h"

namespace pdsim {

enum class Role { kPrefill, kDecode };
enum class GroupState {
  kCollecting,
  kInitializing,
  kHealthy,
  kDegraded,
  kDraining,
  kRemoved,
};
enum class FaultLevel { kRecoverableInPlace = 1, kSubstituteRequired = 2 };
enum class HealthStatus { kOk, kFault, kMissing };

std::string_view RoleName(Role role);
std::string_view GroupStateName(GroupState state);
std::string_view FaultLevelName(FaultLevel level);
std::string_view HealthStatusName(HealthStatus status);

using ContainerId = std::uint64_t;

// Stateless container with its ordered device endpoints. The two flags
// inject setup failures.
struct Container {
  ContainerId id = 0;
  std::vector<std::string> endpoints;
  bool never_reports = false;
  bool connect_fails = false;
};

struct MemberRecord {
  InstanceId id = 0;
  Role role = Role::kPrefill;
  ContainerId container = 0;
  std::vector<std::string> endpoints;
  bool routable = true;
  bool faulted = false;
  double removed_at = -1.0;
};

struct GroupSpec {
  std::string name;
  std::string service = "default";
  std::vector<std::string> scenarios;
  int n_prefill = 1;
  int n_decode = 1;
  int batch_prefill = 1;
  int batch_decode = 1;

  friend bool operator==(const GroupSpec&, const GroupSpec&) = default;
};

struct GroupRecord {
  GroupSpec spec;
  std::map<Role, std::vector<MemberRecord>> members;
  GroupState state = GroupState::kCollecting;
  std::uint64_t meta_version = 0;

  const std::string& name() const { return spec.name; }
  bool Active() const {
    return state == GroupState::kHealthy || state == GroupState::kDegraded;
  }
  bool Serves(std::string_view scenario) const;
  int RoutableCount(Role role) const;
  const MemberRecord* Find(InstanceId id) const;
  MemberRecord* Find(InstanceId id);
  // Routable instance ids of `role`, in membership order.
  std::vector<InstanceId> Routable(Role role) const;
  ClusterShape Shape() const;
};

struct TranscriptEntry {
  double time = 0.0;
  std::string step;
  std::string detail;
};

struct WorkflowTranscript {
  std::string kind;
  std::string group;
  std::vector<TranscriptEntry> entries;
  double started_at = 0.0;
  double finished_at = -1.0;
  bool finished = false;
  bool succeeded = false;
};

struct FaultEvent {
  InstanceId instance = 0;
  FaultLevel level = FaultLevel::kSubstituteRequired;
  double detected_at = 0.0;
  bool recoverable = false;
};

struct RecoveryTranscript {
  FaultEvent fault;
  std::string group;
  Role role = Role::kPrefill;
  std::string action;
  std::vector<TranscriptEntry> steps;
  int containers_added = 0;
  InstanceId substitute = 0;
  bool alert = false;
  bool completed = false;
};

struct HealthRecord {
  double last_report = 0.0;
  HealthStatus status = HealthStatus::kOk;
  int fault_level = 0;
};

// Per-instance report bookkeeping. An instance is missing once it has been
// silent for longer than interval * miss_threshold.
class HealthLedger {
 public:
  HealthLedger(double report_interval, int miss_threshold);

  void Report(InstanceId id, double now);
  void MarkFault(InstanceId id, int level);
  void Forget(InstanceId id);
  HealthStatus Status(InstanceId id, double now) const;
  // Ids whose status is missing at `now`, ascending.
  std::vector<InstanceId> Missing(double now) const;
  bool Knows(InstanceId id) const { return records_.count(id) > 0; }
  const std::map<InstanceId, HealthRecord>& records() const { return records_; }

 private:
  double report_interval_;
  int miss_threshold_;
  std::map<InstanceId, HealthRecord> records_;
};

struct RatioStep {
  enum class Kind { kAdd, kRemove };
  Kind kind = Kind::kAdd;
  Role role = Role::kPrefill;

  friend bool operator==(const RatioStep&, const RatioStep&) = default;
};

struct RatioPlan {
  std::vector<RatioStep> steps;
  bool feasible = true;
  std::string reason;
};

enum class RatioPolicy { kProfileDriven, kMonitorDriven };

// Steps from `current` to `target`. With a fixed instance total, each removal
// frees a container that the following addition reuses; otherwise additions
// come first so capacity never dips.
RatioPlan PlanRatioAdjustment(const ClusterShape& current,
                              const ClusterShape& target, int free_containers,
                              bool fixed_total);

struct MonitorSample {
  double mean_e2e = 0.0;
  // Mean T_p over mean E2E.
  double tp_proportion = 0.0;
};

// Rising E2E with a rising T_p share asks for prefill; rising E2E with a
// falling share asks for decoding. Nothing otherwise.
std::optional<Role> RecommendRole(const MonitorSample& previous,
                                  const MonitorSample& current,
                                  double e2e_rise = 0.10,
                                  double proportion_shift = 0.02);

struct LatencyRange {
  double min = 0.0;
  double max = 0.0;

  double Sample(Rng& rng) const;
  friend bool operator==(const LatencyRange&, const LatencyRange&) = default;
};

struct ModelLoadProfile {
  LatencyRange prefill;
  LatencyRange decode;
  friend bool operator==(const ModelLoadProfile&,
                         const ModelLoadProfile&) = default;
};

struct ControlPlaneOptions {
  double propagation_delay = 0.05;
  LatencyRange report_latency{0.5, 2.0};
  double collect_timeout = 30.0;
  int collect_retries = 2;
  LatencyRange connect_latency{1.0, 5.0};
  double connect_timeout = 60.0;
  std::string storage_backend = "sfs";
  std::map<std::string, ModelLoadProfile> model_load = {
      {"sfs", {{150.0, 240.0}, {180.0, 300.0}}},
      {"ssd", {{60.0, 100.0}, {75.0, 120.0}}},
  };
  double health_interval = 10.0;
  int miss_threshold = 3;
  double detect_poll_interval = 5.0;
  double in_place_reset = 20.0;
  double drain_poll = 1.0;
  int devices_per_instance = 8;

  void Validate() const;
  friend bool operator==(const ControlPlaneOptions&,
                         const ControlPlaneOptions&) = default;
};

// Hooks into the serving layer. Calls happen on the engine thread.
class ControlPlaneObserver {
 public:
  virtual ~ControlPlaneObserver() = default;
  virtual void OnInstanceStarted(const GroupRecord& group,
                                 const MemberRecord& member) = 0;
  virtual void OnViewPropagated(const GroupRecord& view) = 0;
  // Terminate everything running on the instance (protection).
  virtual void OnInstanceFaulted(InstanceId id) = 0;
  virtual void OnInstanceRecovered(InstanceId id) = 0;
  virtual void OnInstanceReleased(InstanceId id) = 0;
  virtual std::size_t InFlight(InstanceId id) const = 0;
};

class ControlPlane {
 public:
  using Done = std::function<void(bool ok)>;

  ControlPlane(Simulator& sim, ControlPlaneOptions options, Rng rng,
               ControlPlaneObserver* observer);
  ControlPlane(const ControlPlane&) = delete;
  ControlPlane& operator=(const ControlPlane&) = delete;

  // Adds `count` fresh stateless containers to the free pool.
  void AddFreeContainers(int count);
  void AddContainer(Container container);
  std::size_t free_containers() const { return pool_.size(); }

  // Registers a group as already healthy at the current time, without the
  // setup workflow. Used to start serving experiments warm.
  const GroupRecord& BootstrapGroup(const GroupSpec& spec);

  // Six-step setup: collect endpoint reports, issue init, connect, load the
  // pre-compiled models, first health report, confirm. Throws kInvalidState
  // if the pool lacks containers.
  void SetupGroup(const GroupSpec& spec, Done done = {});

  // Integrates `count` stateless containers as `role`. Throws kInvalidState
  // for inactive groups or an empty pool.
  void AddMembers(const std::string& group, int count, Role role,
                  Done done = {});

  // Logical removal now, drain after propagation, then release. Throws
  // kInvalidState if it would leave an active group without a prefill or a
  // decoding instance.
  void RemoveMembers(const std::string& group,
                     const std::vector<InstanceId>& ids, Done done = {});

  // Plans and executes steps towards `target`. Infeasible plans are returned
  // without executing anything.
  RatioPlan AdjustRatio(const std::string& group, const ClusterShape& target,
                        bool fixed_total, Done done = {});
  // Monitor-driven variant: one instance of the recommended role, if any.
  RatioPlan AdjustRatioFromMonitor(const std::string& group,
                                   const MonitorSample& previous,
                                   const MonitorSample& current,
                                   Done done = {});

  // Returns a pointer to the stored transcript, or nullptr when the fault
  // needs no action (unknown instance, inactive group, already handled).
  const RecoveryTranscript* DetectAndRecover(const FaultEvent& fault);

  // Marks the device faulty. Unless `silent`, the fault shows up in the
  // device status file read by the next detection poll; silent faults are
  // found only through missing health reports.
  void InjectFault(InstanceId id, FaultLevel level, bool silent = false);

  // Periodic health reports from every live instance plus the detection
  // poll.
  void StartHealthMonitoring();

  // Drains and re-creates the named groups one after another.
  void RollingUpgrade(std::vector<std::string> groups, Done done = {});

  const GroupRecord* Group(const std::string& name) const;
  const GroupRecord* View(const std::string& name) const;
  std::vector<std::string> GroupNames() const;
  const std::map<std::string, GroupRecord>& groups() const { return groups_; }
  const std::map<std::string, GroupRecord>& views() const { return views_; }

  // Deques keep element addresses stable as transcripts are appended.
  const std::deque<RecoveryTranscript>& recoveries() const {
    return recoveries_;
  }
  const std::deque<WorkflowTranscript>& workflows() const {
    return workflows_;
  }
  // Logical removal time per instance ever removed.
  const std::map<InstanceId, double>& removal_times() const {
    return removal_times_;
  }
  const HealthLedger& health() const { return health_; }
  const ControlPlaneOptions& options() const { return options_; }
  int containers_added() const { return containers_added_; }
  const std::map<std::string, int>& shortfall() const { return shortfall_; }
  std::optional<std::string> GroupOf(InstanceId id) const;
  // True when no device endpoint appears twice across live members.
  bool EndpointsUnique() const;

  // Structured JSON snapshot of registry and views at the current time.
  std::string DumpSnapshot() const;

 private:
  struct SetupRun;

  GroupRecord& MutableGroup(const std::string& name);
  Container MintContainer();
  Container TakeContainer();
  void Propagate(const std::string& group);
  MemberRecord MakeMember(Role role, const Container& container);
  void StartInstance(const GroupRecord& group, const MemberRecord& member);
  void ScheduleReport(InstanceId id);
  void DrainStep(const std::string& group, std::vector<InstanceId> ids,
                 bool return_containers, WorkflowTranscript* transcript,
                 Done done);
  void ReleaseMember(GroupRecord& group, InstanceId id, bool return_container);
  void SetupGroupInternal(const GroupSpec& spec, std::uint64_t base_version,
                          Done done);
  void CollectAttempt(std::shared_ptr<SetupRun> run);
  void SetupInit(std::shared_ptr<SetupRun> run);
  void SetupConfirm(std::shared_ptr<SetupRun> run);
  void SetupAbort(std::shared_ptr<SetupRun> run, const std::string& reason);
  void AddMembersInternal(
      const std::string& group, int count, Role role,
      std::function<void(bool, std::vector<InstanceId>)> done);
  void ExecutePlan(const std::string& group, std::vector<RatioStep> steps,
                   std::size_t index, Done done);
  void UpgradeNext(std::shared_ptr<std::vector<std::string>> groups,
                   std::size_t index, Done done);
  void DetectionPoll();
  void RefreshGroupState(GroupRecord& group);
  WorkflowTranscript& NewWorkflow(std::string kind, std::string group);
  std::size_t InFlight(InstanceId id) const;

  Simulator& sim_;
  ControlPlaneOptions options_;
  Rng rng_;
  ControlPlaneObserver* observer_;
  HealthLedger health_;

  std::map<std::string, GroupRecord> groups_;
  std::map<std::string, GroupRecord> views_;
  std::deque<Container> pool_;
  std::map<InstanceId, ContainerId> instance_container_;
  std::map<InstanceId, std::string> instance_group_;
  std::map<InstanceId, double> removal_times_;
  std::map<InstanceId, FaultLevel> device_faults_;
  std::map<InstanceId, bool> silenced_;
  std::deque<RecoveryTranscript> recoveries_;
  std::deque<WorkflowTranscript> workflows_;
  InstanceId next_instance_ = 1;
  ContainerId next_container_ = 1;
  std::map<std::string, int> shortfall_;
  int containers_added_ = 0;
  bool monitoring_ = false;
};

}  // namespace pdsim
