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

#include <algorithm>
#include <set>
#include <utility>

#include <fmt/format.h>

#include "json.hpp"
#include "pdsim/errors.h"

namespace pdsim {

std::string_view RoleName(Role role) {
  return role == Role::kPrefill ? "prefill" : "decode";
}

std::string_view GroupStateName(GroupState state) {
  switch (state) {
    case GroupState::kCollecting:
      return "collecting";
    case GroupState::kInitializing:
      return "initializing";
    case GroupState::kHealthy:
      return "healthy";
    case GroupState::kDegraded:
      return "degraded";
    case GroupState::kDraining:
      return "draining";
    case GroupState::kRemoved:
      return "removed";
  }
  return "unknown";
}

std::string_view FaultLevelName(FaultLevel level) {
  return level == FaultLevel::kRecoverableInPlace ? "recoverable_in_place"
                                                  : "substitute_required";
}

std::string_view HealthStatusName(HealthStatus status) {
  switch (status) {
    case HealthStatus::kOk:
      return "ok";
    case HealthStatus::kFault:
      return "fault";
    case HealthStatus::kMissing:
      return "missing";
  }
  return "unknown";
}

bool GroupRecord::Serves(std::string_view scenario) const {
  return std::find(spec.scenarios.begin(), spec.scenarios.end(), scenario) !=
         spec.scenarios.end();
}

int GroupRecord::RoutableCount(Role role) const {
  auto it = members.find(role);
  if (it == members.end()) return 0;
  return static_cast<int>(
      std::count_if(it->second.begin(), it->second.end(),
                    [](const MemberRecord& m) { return m.routable; }));
}

const MemberRecord* GroupRecord::Find(InstanceId id) const {
  for (const auto& [role, list] : members) {
    for (const auto& m : list) {
      if (m.id == id) return &m;
    }
  }
  return nullptr;
}

MemberRecord* GroupRecord::Find(InstanceId id) {
  return const_cast<MemberRecord*>(std::as_const(*this).Find(id));
}

std::vector<InstanceId> GroupRecord::Routable(Role role) const {
  std::vector<InstanceId> ids;
  auto it = members.find(role);
  if (it == members.end()) return ids;
  for (const auto& m : it->second) {
    if (m.routable) ids.push_back(m.id);
  }
  return ids;
}

ClusterShape GroupRecord::Shape() const {
  ClusterShape shape;
  shape.n_prefill = RoutableCount(Role::kPrefill);
  shape.n_decode = RoutableCount(Role::kDecode);
  shape.batch_prefill = spec.batch_prefill;
  shape.batch_decode = spec.batch_decode;
  return shape;
}

HealthLedger::HealthLedger(double report_interval, int miss_threshold)
    : report_interval_(report_interval), miss_threshold_(miss_threshold) {
  Require(report_interval > 0.0, ErrorCode::kInvalidArgument,
          "health report interval must be positive");
  Require(miss_threshold >= 1, ErrorCode::kInvalidArgument,
          "miss threshold must be >= 1");
}

void HealthLedger::Report(InstanceId id, double now) {
  auto& record = records_[id];
  record.last_report = now;
  if (record.status == HealthStatus::kMissing) {
    record.status = HealthStatus::kOk;
  }
}

void HealthLedger::MarkFault(InstanceId id, int level) {
  auto& record = records_[id];
  record.status = HealthStatus::kFault;
  record.fault_level = level;
}

void HealthLedger::Forget(InstanceId id) { records_.erase(id); }

HealthStatus HealthLedger::Status(InstanceId id, double now) const {
  auto it = records_.find(id);
  if (it == records_.end()) {
    Throw(ErrorCode::kInvalidArgument,
          fmt::format("no health record for instance {}", id));
  }
  if (it->second.status == HealthStatus::kFault) return HealthStatus::kFault;
  if (now - it->second.last_report > report_interval_ * miss_threshold_) {
    return HealthStatus::kMissing;
  }
  return HealthStatus::kOk;
}

std::vector<InstanceId> HealthLedger::Missing(double now) const {
  std::vector<InstanceId> ids;
  for (const auto& [id, record] : records_) {
    if (Status(id, now) == HealthStatus::kMissing) ids.push_back(id);
  }
  return ids;
}

RatioPlan PlanRatioAdjustment(const ClusterShape& current,
                              const ClusterShape& target, int free_containers,
                              bool fixed_total) {
  RatioPlan plan;
  if (target.n_prefill < 1 || target.n_decode < 1) {
    plan.feasible = false;
    plan.reason = "target must keep at least one instance per role";
    return plan;
  }
  const int dp = target.n_prefill - current.n_prefill;
  const int dd = target.n_decode - current.n_decode;
  std::vector<RatioStep> adds;
  std::vector<RatioStep> removes;
  for (int i = 0; i < std::max(dp, 0); ++i) {
    adds.push_back({RatioStep::Kind::kAdd, Role::kPrefill});
  }
  for (int i = 0; i < std::max(dd, 0); ++i) {
    adds.push_back({RatioStep::Kind::kAdd, Role::kDecode});
  }
  for (int i = 0; i < std::max(-dp, 0); ++i) {
    removes.push_back({RatioStep::Kind::kRemove, Role::kPrefill});
  }
  for (int i = 0; i < std::max(-dd, 0); ++i) {
    removes.push_back({RatioStep::Kind::kRemove, Role::kDecode});
  }
  const int a = static_cast<int>(adds.size());
  const int r = static_cast<int>(removes.size());
  if (fixed_total) {
    if (target.total() != current.total()) {
      plan.feasible = false;
      plan.reason = "fixed total requires target total == current total";
      return plan;
    }
    if (a > free_containers + r) {
      plan.feasible = false;
      plan.reason = "not enough containers";
      return plan;
    }
    for (int i = 0; i < std::max(a, r); ++i) {
      if (i < r) plan.steps.push_back(removes[i]);
      if (i < a) plan.steps.push_back(adds[i]);
    }
  } else {
    if (a > free_containers) {
      plan.feasible = false;
      plan.reason = "not enough free containers";
      return plan;
    }
    plan.steps = adds;
    plan.steps.insert(plan.steps.end(), removes.begin(), removes.end());
  }
  return plan;
}

std::optional<Role> RecommendRole(const MonitorSample& previous,
                                  const MonitorSample& current,
                                  double e2e_rise, double proportion_shift) {
  if (previous.mean_e2e <= 0.0) return std::nullopt;
  const double rise = (current.mean_e2e - previous.mean_e2e) / previous.mean_e2e;
  if (rise < e2e_rise) return std::nullopt;
  const double shift = current.tp_proportion - previous.tp_proportion;
  if (shift >= proportion_shift) return Role::kPrefill;
  if (shift <= -proportion_shift) return Role::kDecode;
  return std::nullopt;
}

double LatencyRange::Sample(Rng& rng) const {
  return min + (max - min) * UniformUnit(rng);
}

namespace {

void ValidateRange(const LatencyRange& range, const char* what) {
  if (!(range.min >= 0.0) || !(range.max >= range.min)) {
    Throw(ErrorCode::kConfig, fmt::format("{} range must satisfy 0 <= min <= max",
                                          what));
  }
}

void ValidateSpec(const GroupSpec& spec) {
  Require(!spec.name.empty(), ErrorCode::kInvalidArgument,
          "group name must not be empty");
  Require(!spec.scenarios.empty(), ErrorCode::kInvalidArgument,
          "group must serve at least one scenario");
  Require(spec.n_prefill >= 1 && spec.n_decode >= 1,
          ErrorCode::kInvalidArgument,
          "group needs at least one prefill and one decoding instance");
  Require(spec.batch_prefill >= 1 && spec.batch_decode >= 1,
          ErrorCode::kInvalidArgument, "batch sizes must be >= 1");
}

}  // namespace

void ControlPlaneOptions::Validate() const {
  Require(propagation_delay >= 0.0, ErrorCode::kConfig,
          "propagation_delay must be >= 0");
  ValidateRange(report_latency, "report_latency");
  ValidateRange(connect_latency, "connect_latency");
  Require(collect_timeout > 0.0 && connect_timeout > 0.0, ErrorCode::kConfig,
          "timeouts must be positive");
  Require(collect_retries >= 0, ErrorCode::kConfig,
          "collect_retries must be >= 0");
  auto it = model_load.find(storage_backend);
  if (it == model_load.end()) {
    Throw(ErrorCode::kConfig,
          fmt::format("no model load profile for backend '{}'",
                      storage_backend));
  }
  for (const auto& [name, profile] : model_load) {
    ValidateRange(profile.prefill, "model_load.prefill");
    ValidateRange(profile.decode, "model_load.decode");
  }
  Require(health_interval > 0.0, ErrorCode::kConfig,
          "health_interval must be positive");
  Require(miss_threshold >= 1, ErrorCode::kConfig,
          "miss_threshold must be >= 1");
  Require(detect_poll_interval > 0.0, ErrorCode::kConfig,
          "detect_poll_interval must be positive");
  Require(in_place_reset >= 0.0, ErrorCode::kConfig,
          "in_place_reset must be >= 0");
  Require(drain_poll > 0.0, ErrorCode::kConfig, "drain_poll must be positive");
  Require(devices_per_instance >= 1, ErrorCode::kConfig,
          "devices_per_instance must be >= 1");
}

struct ControlPlane::SetupRun {
  GroupSpec spec;
  std::uint64_t base_version = 0;
  std::vector<Container> containers;
  std::vector<bool> reported;
  int attempt = 0;
  bool collected = false;
  bool finished = false;
  WorkflowTranscript* transcript = nullptr;
  Done done;
};

ControlPlane::ControlPlane(Simulator& sim, ControlPlaneOptions options,
                           Rng rng, ControlPlaneObserver* observer)
    : sim_(sim),
      options_(std::move(options)),
      rng_(rng),
      observer_(observer),
      health_(options_.health_interval, options_.miss_threshold) {
  options_.Validate();
}

Container ControlPlane::MintContainer() {
  Container c;
  c.id = next_container_++;
  Require(c.id < 65536, ErrorCode::kInvalidState, "container id space exhausted");
  for (int d = 0; d < options_.devices_per_instance; ++d) {
    c.endpoints.push_back(
        fmt::format("10.{}.{}.{}", (c.id >> 8) & 0xff, c.id & 0xff, d + 1));
  }
  return c;
}

void ControlPlane::AddFreeContainers(int count) {
  Require(count >= 0, ErrorCode::kInvalidArgument,
          "container count must be >= 0");
  for (int i = 0; i < count; ++i) pool_.push_back(MintContainer());
}

void ControlPlane::AddContainer(Container container) {
  if (container.id == 0 || container.endpoints.empty()) {
    Container minted = MintContainer();
    minted.never_reports = container.never_reports;
    minted.connect_fails = container.connect_fails;
    container = std::move(minted);
  } else {
    next_container_ = std::max(next_container_, container.id + 1);
  }
  pool_.push_back(std::move(container));
}

Container ControlPlane::TakeContainer() {
  Require(!pool_.empty(), ErrorCode::kInvalidState, "no free container");
  Container c = std::move(pool_.front());
  pool_.pop_front();
  return c;
}

GroupRecord& ControlPlane::MutableGroup(const std::string& name) {
  auto it = groups_.find(name);
  if (it == groups_.end()) {
    Throw(ErrorCode::kInvalidArgument, fmt::format("unknown group '{}'", name));
  }
  return it->second;
}

const GroupRecord* ControlPlane::Group(const std::string& name) const {
  auto it = groups_.find(name);
  return it == groups_.end() ? nullptr : &it->second;
}

const GroupRecord* ControlPlane::View(const std::string& name) const {
  auto it = views_.find(name);
  return it == views_.end() ? nullptr : &it->second;
}

std::vector<std::string> ControlPlane::GroupNames() const {
  std::vector<std::string> names;
  for (const auto& [name, g] : groups_) names.push_back(name);
  return names;
}

std::optional<std::string> ControlPlane::GroupOf(InstanceId id) const {
  auto it = instance_group_.find(id);
  if (it == instance_group_.end()) return std::nullopt;
  return it->second;
}

bool ControlPlane::EndpointsUnique() const {
  std::set<std::string> seen;
  for (const auto& [name, g] : groups_) {
    for (const auto& [role, list] : g.members) {
      for (const auto& m : list) {
        for (const auto& e : m.endpoints) {
          if (!seen.insert(e).second) return false;
        }
      }
    }
  }
  return true;
}

std::size_t ControlPlane::InFlight(InstanceId id) const {
  return observer_ ? observer_->InFlight(id) : 0;
}

WorkflowTranscript& ControlPlane::NewWorkflow(std::string kind,
                                              std::string group) {
  auto& wf = workflows_.emplace_back();
  wf.kind = std::move(kind);
  wf.group = std::move(group);
  wf.started_at = sim_.now();
  return wf;
}

void ControlPlane::Propagate(const std::string& group) {
  GroupRecord snapshot = groups_.at(group);
  sim_.ScheduleAfter(options_.propagation_delay, "cp.propagate",
                     [this, snapshot = std::move(snapshot)] {
                       auto it = views_.find(snapshot.name());
                       if (it != views_.end() &&
                           it->second.meta_version > snapshot.meta_version) {
                         return;
                       }
                       GroupRecord& view = views_[snapshot.name()] = snapshot;
                       if (observer_) observer_->OnViewPropagated(view);
                     });
}

MemberRecord ControlPlane::MakeMember(Role role, const Container& container) {
  MemberRecord m;
  m.id = next_instance_++;
  m.role = role;
  m.container = container.id;
  m.endpoints = container.endpoints;
  instance_container_[m.id] = container.id;
  return m;
}

void ControlPlane::StartInstance(const GroupRecord& group,
                                 const MemberRecord& member) {
  instance_group_[member.id] = group.name();
  health_.Report(member.id, sim_.now());
  if (monitoring_) ScheduleReport(member.id);
  if (observer_) observer_->OnInstanceStarted(group, member);
}

void ControlPlane::ScheduleReport(InstanceId id) {
  sim_.ScheduleAfter(options_.health_interval, "cp.health_report", [this, id] {
    if (!instance_group_.count(id) || silenced_.count(id)) return;
    health_.Report(id, sim_.now());
    ScheduleReport(id);
  });
}

const GroupRecord& ControlPlane::BootstrapGroup(const GroupSpec& spec) {
  ValidateSpec(spec);
  auto existing = groups_.find(spec.name);
  Require(existing == groups_.end() ||
              existing->second.state == GroupState::kRemoved,
          ErrorCode::kInvalidState, "group name already in use");
  GroupRecord record;
  record.spec = spec;
  record.state = GroupState::kHealthy;
  record.meta_version =
      existing == groups_.end() ? 1 : existing->second.meta_version + 1;
  for (int i = 0; i < spec.n_prefill; ++i) {
    record.members[Role::kPrefill].push_back(
        MakeMember(Role::kPrefill, MintContainer()));
  }
  for (int i = 0; i < spec.n_decode; ++i) {
    record.members[Role::kDecode].push_back(
        MakeMember(Role::kDecode, MintContainer()));
  }
  GroupRecord& stored = groups_[spec.name] = std::move(record);
  for (const auto& [role, list] : stored.members) {
    for (const auto& m : list) StartInstance(stored, m);
  }
  GroupRecord& view = views_[spec.name] = stored;
  if (observer_) observer_->OnViewPropagated(view);
  return stored;
}

void ControlPlane::SetupGroup(const GroupSpec& spec, Done done) {
  auto existing = groups_.find(spec.name);
  Require(existing == groups_.end() ||
              existing->second.state == GroupState::kRemoved,
          ErrorCode::kInvalidState, "group name already in use");
  SetupGroupInternal(
      spec, existing == groups_.end() ? 0 : existing->second.meta_version,
      std::move(done));
}

void ControlPlane::SetupGroupInternal(const GroupSpec& spec,
                                      std::uint64_t base_version, Done done) {
  ValidateSpec(spec);
  const std::size_t need =
      static_cast<std::size_t>(spec.n_prefill + spec.n_decode);
  if (pool_.size() < need) {
    Throw(ErrorCode::kInvalidState,
          fmt::format("setup of '{}' needs {} containers, {} free", spec.name,
                      need, pool_.size()));
  }
  GroupRecord record;
  record.spec = spec;
  record.state = GroupState::kCollecting;
  record.meta_version = base_version;
  groups_[spec.name] = std::move(record);

  auto run = std::make_shared<SetupRun>();
  run->spec = spec;
  run->base_version = base_version;
  for (std::size_t i = 0; i < need; ++i) {
    run->containers.push_back(TakeContainer());
  }
  run->reported.assign(need, false);
  run->transcript = &NewWorkflow("setup", spec.name);
  run->done = std::move(done);
  run->transcript->entries.push_back(
      {sim_.now(), "collect",
       fmt::format("requesting endpoint reports from {} containers", need)});
  CollectAttempt(run);
}

void ControlPlane::CollectAttempt(std::shared_ptr<SetupRun> run) {
  const int attempt = run->attempt;
  for (std::size_t i = 0; i < run->containers.size(); ++i) {
    if (run->reported[i] || run->containers[i].never_reports) continue;
    const double delay = options_.report_latency.Sample(rng_);
    sim_.ScheduleAfter(delay, "cp.endpoint_report", [this, run, i] {
      if (run->finished || run->collected || run->reported[i]) return;
      run->reported[i] = true;
      if (std::all_of(run->reported.begin(), run->reported.end(),
                      [](bool b) { return b; })) {
        run->collected = true;
        run->transcript->entries.push_back(
            {sim_.now(), "collected",
             fmt::format("{} endpoint reports", run->containers.size())});
        SetupInit(run);
      }
    });
  }
  sim_.ScheduleAfter(options_.collect_timeout, "cp.collect_timeout",
                     [this, run, attempt] {
                       if (run->finished || run->collected ||
                           run->attempt != attempt) {
                         return;
                       }
                       if (attempt < options_.collect_retries) {
                         run->transcript->entries.push_back(
                             {sim_.now(), "collect_retry",
                              fmt::format("attempt {}", attempt + 2)});
                         ++run->attempt;
                         CollectAttempt(run);
                       } else {
                         SetupAbort(run, "endpoint collection timed out");
                       }
                     });
}

void ControlPlane::SetupInit(std::shared_ptr<SetupRun> run) {
  GroupRecord& group = MutableGroup(run->spec.name);
  group.state = GroupState::kInitializing;
  std::string prefill_ids;
  std::string decode_ids;
  for (std::size_t i = 0; i < run->containers.size(); ++i) {
    std::string& out =
        static_cast<int>(i) < run->spec.n_prefill ? prefill_ids : decode_ids;
    out += fmt::format("{}c{}", out.empty() ? "" : ",", run->containers[i].id);
  }
  run->transcript->entries.push_back(
      {sim_.now(), "init",
       fmt::format("prefill [{}] decode [{}]", prefill_ids, decode_ids)});

  const bool fails =
      std::any_of(run->containers.begin(), run->containers.end(),
                  [](const Container& c) { return c.connect_fails; });
  if (fails) {
    sim_.ScheduleAfter(options_.connect_timeout, "cp.connect_timeout",
                       [this, run] { SetupAbort(run, "connection timed out"); });
    return;
  }
  double connect = 0.0;
  for (std::size_t i = 0; i < run->containers.size(); ++i) {
    connect = std::max(connect, options_.connect_latency.Sample(rng_));
  }
  const ModelLoadProfile& load = options_.model_load.at(options_.storage_backend);
  double prefill_load = 0.0;
  double decode_load = 0.0;
  for (std::size_t i = 0; i < run->containers.size(); ++i) {
    if (static_cast<int>(i) < run->spec.n_prefill) {
      prefill_load = std::max(prefill_load, load.prefill.Sample(rng_));
    } else {
      decode_load = std::max(decode_load, load.decode.Sample(rng_));
    }
  }
  sim_.ScheduleAfter(connect, "cp.connected", [this, run, prefill_load,
                                               decode_load] {
    if (run->finished) return;
    run->transcript->entries.push_back(
        {sim_.now(), "connected", "P-D links established"});
    run->transcript->entries.push_back(
        {sim_.now(), "load_model",
         fmt::format("backend {} prefill {:.1f}s decode {:.1f}s",
                     options_.storage_backend, prefill_load, decode_load)});
    sim_.ScheduleAfter(std::max(prefill_load, decode_load), "cp.loaded",
                       [this, run] {
                         if (run->finished) return;
                         run->transcript->entries.push_back(
                             {sim_.now(), "health_report",
                              "first report from every instance"});
                         SetupConfirm(run);
                       });
  });
}

void ControlPlane::SetupConfirm(std::shared_ptr<SetupRun> run) {
  GroupRecord& group = MutableGroup(run->spec.name);
  for (std::size_t i = 0; i < run->containers.size(); ++i) {
    const Role role = static_cast<int>(i) < run->spec.n_prefill ? Role::kPrefill
                                                                : Role::kDecode;
    group.members[role].push_back(MakeMember(role, run->containers[i]));
  }
  group.state = GroupState::kHealthy;
  group.meta_version = run->base_version + 1;
  for (const auto& [role, list] : group.members) {
    for (const auto& m : list) StartInstance(group, m);
  }
  Propagate(group.name());
  run->finished = true;
  run->transcript->entries.push_back(
      {sim_.now(), "confirm",
       fmt::format("healthy, meta_version {}", group.meta_version)});
  run->transcript->finished = true;
  run->transcript->succeeded = true;
  run->transcript->finished_at = sim_.now();
  if (run->done) run->done(true);
}

void ControlPlane::SetupAbort(std::shared_ptr<SetupRun> run,
                              const std::string& reason) {
  if (run->finished) return;
  run->finished = true;
  // Containers that behaved go back to the pool; failing ones are discarded.
  for (std::size_t i = 0; i < run->containers.size(); ++i) {
    const Container& c = run->containers[i];
    const bool bad = c.connect_fails || (c.never_reports && !run->reported[i]);
    if (!bad) pool_.push_back(c);
  }
  if (run->base_version == 0) {
    groups_.erase(run->spec.name);
  } else {
    MutableGroup(run->spec.name).state = GroupState::kRemoved;
  }
  run->transcript->entries.push_back({sim_.now(), "abort", reason});
  run->transcript->finished = true;
  run->transcript->finished_at = sim_.now();
  if (run->done) run->done(false);
}

void ControlPlane::AddMembers(const std::string& group, int count, Role role,
                              Done done) {
  AddMembersInternal(group, count, role,
                     [done = std::move(done)](bool ok, std::vector<InstanceId>) {
                       if (done) done(ok);
                     });
}

void ControlPlane::AddMembersInternal(
    const std::string& name, int count, Role role,
    std::function<void(bool, std::vector<InstanceId>)> done) {
  GroupRecord& group = MutableGroup(name);
  Require(group.Active(), ErrorCode::kInvalidState,
          "members can only be added to an active group");
  Require(count >= 1, ErrorCode::kInvalidArgument, "count must be >= 1");
  if (pool_.size() < static_cast<std::size_t>(count)) {
    Throw(ErrorCode::kInvalidState,
          fmt::format("adding {} members needs {} containers, {} free", count,
                      count, pool_.size()));
  }
  std::vector<Container> containers;
  for (int i = 0; i < count; ++i) containers.push_back(TakeContainer());
  WorkflowTranscript* wf = &NewWorkflow("add_members", name);
  wf->entries.push_back(
      {sim_.now(), "connect",
       fmt::format("{} container(s) as {}", count, RoleName(role))});

  const bool fails = std::any_of(containers.begin(), containers.end(),
                                 [](const Container& c) { return c.connect_fails; });
  if (fails) {
    sim_.ScheduleAfter(options_.connect_timeout, "cp.connect_timeout",
                       [this, wf, done] {
                         wf->entries.push_back(
                             {sim_.now(), "connection_failure",
                              "containers discarded, group unchanged"});
                         wf->finished = true;
                         wf->finished_at = sim_.now();
                         done(false, {});
                       });
    return;
  }
  double connect = 0.0;
  double load = 0.0;
  const ModelLoadProfile& profile =
      options_.model_load.at(options_.storage_backend);
  for (std::size_t i = 0; i < containers.size(); ++i) {
    connect = std::max(connect, options_.connect_latency.Sample(rng_));
    load = std::max(load, (role == Role::kPrefill ? profile.prefill
                                                  : profile.decode)
                              .Sample(rng_));
  }
  sim_.ScheduleAfter(connect + load, "cp.member_ready", [this, name, role, wf,
                                                         containers, load,
                                                         done] {
    wf->entries.push_back(
        {sim_.now(), "load_model", fmt::format("{:.1f}s", load)});
    auto it = groups_.find(name);
    if (it == groups_.end() || !it->second.Active()) {
      for (const auto& c : containers) pool_.push_back(c);
      wf->entries.push_back({sim_.now(), "abort", "group no longer active"});
      wf->finished = true;
      wf->finished_at = sim_.now();
      done(false, {});
      return;
    }
    GroupRecord& group = it->second;
    std::vector<InstanceId> ids;
    auto& list = group.members[role];
    for (const auto& c : containers) {
      list.push_back(MakeMember(role, c));
      ids.push_back(list.back().id);
    }
    ++group.meta_version;
    for (InstanceId id : ids) StartInstance(group, *group.Find(id));
    containers_added_ += static_cast<int>(ids.size());
    auto sf = shortfall_.find(name);
    if (sf != shortfall_.end()) {
      sf->second = std::max(0, sf->second - static_cast<int>(ids.size()));
    }
    RefreshGroupState(group);
    Propagate(name);
    wf->entries.push_back(
        {sim_.now(), "registry_update",
         fmt::format("meta_version {}", group.meta_version)});
    wf->finished = true;
    wf->succeeded = true;
    wf->finished_at = sim_.now();
    done(true, ids);
  });
}

void ControlPlane::RemoveMembers(const std::string& name,
                                 const std::vector<InstanceId>& ids,
                                 Done done) {
  GroupRecord& group = MutableGroup(name);
  Require(group.Active(), ErrorCode::kInvalidState,
          "members can only be removed from an active group");
  Require(!ids.empty(), ErrorCode::kInvalidArgument, "no members to remove");
  std::set<InstanceId> unique(ids.begin(), ids.end());
  Require(unique.size() == ids.size(), ErrorCode::kInvalidArgument,
          "duplicate instance ids");
  int prefill = 0;
  int decode = 0;
  for (InstanceId id : ids) {
    const MemberRecord* m = group.Find(id);
    if (m == nullptr || !m->routable) {
      Throw(ErrorCode::kInvalidArgument,
            fmt::format("instance {} is not a routable member of '{}'", id,
                        name));
    }
    (m->role == Role::kPrefill ? prefill : decode) += 1;
  }
  if (group.RoutableCount(Role::kPrefill) - prefill < 1 ||
      group.RoutableCount(Role::kDecode) - decode < 1) {
    Throw(ErrorCode::kInvalidState,
          "removal refused: group would lose its last prefill or decoding "
          "instance");
  }
  const double now = sim_.now();
  for (InstanceId id : ids) {
    MemberRecord* m = group.Find(id);
    m->routable = false;
    m->removed_at = now;
    removal_times_[id] = now;
  }
  ++group.meta_version;
  Propagate(name);
  WorkflowTranscript* wf = &NewWorkflow("remove_members", name);
  wf->entries.push_back(
      {now, "logical_removal",
       fmt::format("{} instance(s), meta_version {}", ids.size(),
                   group.meta_version)});
  sim_.ScheduleAfter(options_.propagation_delay, "cp.drain",
                     [this, name, ids, wf, done = std::move(done)] {
                       wf->entries.push_back({sim_.now(), "drain", ""});
                       DrainStep(name, ids, true, wf, done);
                     });
}

void ControlPlane::DrainStep(const std::string& name,
                             std::vector<InstanceId> ids,
                             bool return_containers,
                             WorkflowTranscript* transcript, Done done) {
  std::size_t in_flight = 0;
  for (InstanceId id : ids) in_flight += InFlight(id);
  if (in_flight > 0) {
    sim_.ScheduleAfter(options_.drain_poll, "cp.drain_poll",
                       [this, name, ids = std::move(ids), return_containers,
                        transcript, done = std::move(done)]() mutable {
                         DrainStep(name, std::move(ids), return_containers,
                                   transcript, std::move(done));
                       });
    return;
  }
  GroupRecord& group = MutableGroup(name);
  for (InstanceId id : ids) ReleaseMember(group, id, return_containers);
  ++group.meta_version;
  Propagate(name);
  transcript->entries.push_back(
      {sim_.now(), "release",
       fmt::format("{} instance(s), meta_version {}", ids.size(),
                   group.meta_version)});
  transcript->finished = true;
  transcript->succeeded = true;
  transcript->finished_at = sim_.now();
  if (done) done(true);
}

void ControlPlane::ReleaseMember(GroupRecord& group, InstanceId id,
                                 bool return_container) {
  for (auto& [role, list] : group.members) {
    auto it = std::find_if(list.begin(), list.end(),
                           [id](const MemberRecord& m) { return m.id == id; });
    if (it == list.end()) continue;
    if (return_container) {
      Container c;
      c.id = it->container;
      c.endpoints = it->endpoints;
      pool_.push_back(std::move(c));
    }
    list.erase(it);
    break;
  }
  instance_group_.erase(id);
  instance_container_.erase(id);
  health_.Forget(id);
  silenced_.erase(id);
  device_faults_.erase(id);
  if (observer_) observer_->OnInstanceReleased(id);
}

void ControlPlane::RefreshGroupState(GroupRecord& group) {
  if (!group.Active()) return;
  bool faulted = false;
  for (const auto& [role, list] : group.members) {
    for (const auto& m : list) faulted = faulted || m.faulted;
  }
  auto sf = shortfall_.find(group.name());
  const bool short_handed = sf != shortfall_.end() && sf->second > 0;
  group.state = faulted || short_handed ? GroupState::kDegraded
                                        : GroupState::kHealthy;
}

RatioPlan ControlPlane::AdjustRatio(const std::string& name,
                                    const ClusterShape& target,
                                    bool fixed_total, Done done) {
  GroupRecord& group = MutableGroup(name);
  Require(group.Active(), ErrorCode::kInvalidState,
          "ratio adjustment needs an active group");
  RatioPlan plan = PlanRatioAdjustment(
      group.Shape(), target, static_cast<int>(pool_.size()), fixed_total);
  if (!plan.feasible) {
    if (done) done(false);
    return plan;
  }
  ExecutePlan(name, plan.steps, 0, std::move(done));
  return plan;
}

RatioPlan ControlPlane::AdjustRatioFromMonitor(const std::string& name,
                                               const MonitorSample& previous,
                                               const MonitorSample& current,
                                               Done done) {
  std::optional<Role> role = RecommendRole(previous, current);
  if (!role) {
    if (done) done(true);
    RatioPlan plan;
    plan.reason = "no change recommended";
    return plan;
  }
  ClusterShape target = MutableGroup(name).Shape();
  (*role == Role::kPrefill ? target.n_prefill : target.n_decode) += 1;
  return AdjustRatio(name, target, false, std::move(done));
}

void ControlPlane::ExecutePlan(const std::string& name,
                               std::vector<RatioStep> steps, std::size_t index,
                               Done done) {
  if (index == steps.size()) {
    if (done) done(true);
    return;
  }
  const RatioStep step = steps[index];
  auto next = [this, name, steps, index, done](bool ok) {
    if (!ok) {
      if (done) done(false);
      return;
    }
    ExecutePlan(name, steps, index + 1, done);
  };
  if (step.kind == RatioStep::Kind::kAdd) {
    AddMembers(name, 1, step.role, next);
  } else {
    std::vector<InstanceId> routable = MutableGroup(name).Routable(step.role);
    RemoveMembers(name, {routable.back()}, next);
  }
}

void ControlPlane::InjectFault(InstanceId id, FaultLevel level, bool silent) {
  Require(instance_group_.count(id) > 0, ErrorCode::kInvalidArgument,
          "fault injected into unknown instance");
  silenced_[id] = true;
  if (!silent) device_faults_[id] = level;
}

void ControlPlane::StartHealthMonitoring() {
  if (monitoring_) return;
  monitoring_ = true;
  for (const auto& [id, group] : instance_group_) ScheduleReport(id);
  sim_.ScheduleAfter(options_.detect_poll_interval, "cp.detect_poll",
                     [this] { DetectionPoll(); });
}

void ControlPlane::DetectionPoll() {
  const double now = sim_.now();
  auto faults = std::move(device_faults_);
  device_faults_.clear();
  for (const auto& [id, level] : faults) {
    DetectAndRecover(
        {id, level, now, level == FaultLevel::kRecoverableInPlace});
  }
  for (InstanceId id : health_.Missing(now)) {
    DetectAndRecover({id, FaultLevel::kSubstituteRequired, now, false});
  }
  sim_.ScheduleAfter(options_.detect_poll_interval, "cp.detect_poll",
                     [this] { DetectionPoll(); });
}

const RecoveryTranscript* ControlPlane::DetectAndRecover(
    const FaultEvent& fault) {
  auto owner = instance_group_.find(fault.instance);
  if (owner == instance_group_.end()) return nullptr;
  const std::string name = owner->second;
  GroupRecord& group = MutableGroup(name);
  if (!group.Active()) return nullptr;
  MemberRecord* member = group.Find(fault.instance);
  if (member == nullptr || !member->routable || member->faulted) return nullptr;

  const double now = sim_.now();
  const InstanceId id = fault.instance;
  health_.MarkFault(id, static_cast<int>(fault.level));
  RecoveryTranscript& t = recoveries_.emplace_back();
  t.fault = fault;
  t.group = name;
  t.role = member->role;
  t.steps.push_back(
      {now, "detect",
       fmt::format("instance {} {}", id, FaultLevelName(fault.level))});

  if (fault.level == FaultLevel::kRecoverableInPlace) {
    t.action = "in_place_reset";
    member->faulted = true;
    if (observer_) observer_->OnInstanceFaulted(id);
    t.steps.push_back({now, "protection", "in-flight requests terminated"});
    RecoveryTranscript* tp = &t;
    sim_.ScheduleAfter(options_.in_place_reset, "cp.in_place_reset",
                       [this, tp, id, name] {
                         auto it = groups_.find(name);
                         if (it == groups_.end()) return;
                         MemberRecord* m = it->second.Find(id);
                         if (m == nullptr) return;
                         m->faulted = false;
                         silenced_.erase(id);
                         health_.Forget(id);
                         health_.Report(id, sim_.now());
                         if (monitoring_) ScheduleReport(id);
                         RefreshGroupState(it->second);
                         if (observer_) observer_->OnInstanceRecovered(id);
                         tp->steps.push_back(
                             {sim_.now(), "reset_complete", "instance serving"});
                         tp->completed = true;
                       });
    RefreshGroupState(group);
    return &t;
  }

  t.action = "substitute";
  member->routable = false;
  member->faulted = true;
  member->removed_at = now;
  removal_times_[id] = now;
  group.state = GroupState::kDegraded;
  ++group.meta_version;
  t.steps.push_back(
      {now, "logical_removal",
       fmt::format("meta_version {}", group.meta_version)});
  if (observer_) observer_->OnInstanceFaulted(id);
  t.steps.push_back({now, "protection", "in-flight requests terminated"});
  Propagate(name);
  RecoveryTranscript* tp = &t;
  const std::uint64_t pushed = group.meta_version;
  sim_.ScheduleAfter(options_.propagation_delay, "cp.meta_push",
                     [this, tp, pushed] {
                       tp->steps.push_back(
                           {sim_.now(), "meta_push",
                            fmt::format("view at meta_version {}", pushed)});
                     });

  auto erase_faulty = [this, tp, id, name] {
    GroupRecord& g = MutableGroup(name);
    ReleaseMember(g, id, false);
    ++g.meta_version;
    RefreshGroupState(g);
    Propagate(name);
    tp->steps.push_back(
        {sim_.now(), "erase",
         fmt::format("faulty instance {} erased, meta_version {}", id,
                     g.meta_version)});
    tp->completed = true;
  };

  if (pool_.empty()) {
    t.alert = true;
    shortfall_[name] += 1;
    t.steps.push_back(
        {now, "alert", "no free container, group stays degraded"});
    erase_faulty();
    return &t;
  }
  t.steps.push_back(
      {now, "add_substitute", fmt::format("container c{}", pool_.front().id)});
  AddMembersInternal(
      name, 1, t.role,
      [this, tp, name, erase_faulty](bool ok, std::vector<InstanceId> ids) {
        if (ok) {
          tp->containers_added = 1;
          tp->substitute = ids.front();
          tp->steps.push_back(
              {sim_.now(), "meta_update",
               fmt::format("substitute {} registered, meta_version {}",
                           ids.front(), MutableGroup(name).meta_version)});
        } else {
          tp->alert = true;
          shortfall_[name] += 1;
          tp->steps.push_back(
              {sim_.now(), "alert", "substitute failed, group stays degraded"});
        }
        erase_faulty();
      });
  return &t;
}

void ControlPlane::RollingUpgrade(std::vector<std::string> groups, Done done) {
  for (const auto& name : groups) {
    Require(MutableGroup(name).Active(), ErrorCode::kInvalidState,
            "rolling upgrade needs active groups");
  }
  UpgradeNext(std::make_shared<std::vector<std::string>>(std::move(groups)), 0,
              std::move(done));
}

void ControlPlane::UpgradeNext(
    std::shared_ptr<std::vector<std::string>> groups, std::size_t index,
    Done done) {
  if (index == groups->size()) {
    if (done) done(true);
    return;
  }
  const std::string name = (*groups)[index];
  GroupRecord& group = MutableGroup(name);
  const double now = sim_.now();
  std::vector<InstanceId> ids;
  for (auto& [role, list] : group.members) {
    for (auto& m : list) {
      ids.push_back(m.id);
      if (m.routable) {
        m.routable = false;
        m.removed_at = now;
        removal_times_[m.id] = now;
      }
    }
  }
  group.state = GroupState::kDraining;
  ++group.meta_version;
  Propagate(name);
  WorkflowTranscript* wf = &NewWorkflow("upgrade", name);
  wf->entries.push_back(
      {now, "drain", fmt::format("{} instance(s), meta_version {}", ids.size(),
                                 group.meta_version)});
  const GroupSpec spec = group.spec;
  sim_.ScheduleAfter(
      options_.propagation_delay, "cp.upgrade_drain",
      [this, name, ids, wf, spec, groups, index, done] {
        DrainStep(name, ids, true, wf,
                  [this, name, spec, groups, index, done](bool) {
                    GroupRecord& g = MutableGroup(name);
                    g.state = GroupState::kRemoved;
                    SetupGroupInternal(spec, g.meta_version,
                                       [this, groups, index, done](bool ok) {
                                         if (!ok) {
                                           if (done) done(false);
                                           return;
                                         }
                                         UpgradeNext(groups, index + 1, done);
                                       });
                  });
      });
}

std::string ControlPlane::DumpSnapshot() const {
  using nlohmann::ordered_json;
  auto dump_group = [](const GroupRecord& g) {
    ordered_json out;
    out["name"] = g.name();
    out["service"] = g.spec.service;
    out["scenarios"] = g.spec.scenarios;
    out["state"] = GroupStateName(g.state);
    out["meta_version"] = g.meta_version;
    ordered_json members = ordered_json::object();
    for (const auto& [role, list] : g.members) {
      ordered_json arr = ordered_json::array();
      for (const auto& m : list) {
        ordered_json jm;
        jm["id"] = m.id;
        jm["container"] = m.container;
        jm["routable"] = m.routable;
        jm["faulted"] = m.faulted;
        jm["endpoints"] = m.endpoints;
        arr.push_back(std::move(jm));
      }
      members[std::string(RoleName(role))] = std::move(arr);
    }
    out["members"] = std::move(members);
    return out;
  };
  ordered_json root;
  root["time"] = sim_.now();
  root["free_containers"] = pool_.size();
  root["containers_added"] = containers_added_;
  ordered_json registry = ordered_json::array();
  for (const auto& [name, g] : groups_) registry.push_back(dump_group(g));
  root["registry"] = std::move(registry);
  ordered_json views = ordered_json::array();
  for (const auto& [name, g] : views_) views.push_back(dump_group(g));
  root["views"] = std::move(views);
  return root.dump(2);
}

}  // namespace pdsim
