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

#include "pdsim/cluster.h"

#include <algorithm>
#include <utility>

#include <fmt/format.h>

#include "pdsim/errors.h"

namespace pdsim {

namespace {

constexpr std::size_t kMaxViolationMessages = 50;
constexpr char kFallbackText[] = "service temporarily unavailable, please retry";

}  // namespace

ServingCluster::ServingCluster(const RunConfig& config,
                               std::vector<Request> requests)
    : config_(config),
      streams_(config.seed),
      transfer_rng_(streams_.Stream("transfer")),
      gateway_(config.gateway),
      metrics_(config.bucket_width, config.duration + config.DrainSeconds()),
      requests_(std::move(requests)),
      tracks_(requests_.size()),
      kv_bytes_per_token_(config.model.KvBytesPerToken()) {
  for (std::size_t i = 0; i < requests_.size(); ++i) {
    Require(requests_[i].id == i + 1, ErrorCode::kInvalidArgument,
            "request ids must be 1..N in arrival order");
    Require(i == 0 || requests_[i].arrival >= requests_[i - 1].arrival,
            ErrorCode::kInvalidArgument, "requests must be sorted by arrival");
  }
  for (const auto& s : config_.scenarios) scenarios_[s.id] = &s;
  control_ = std::make_unique<ControlPlane>(
      sim_, config_.control, streams_.Stream("control_plane"), this);
}

ServingCluster::~ServingCluster() = default;

void ServingCluster::Start() {
  Require(!started_, ErrorCode::kInvalidState, "cluster already started");
  started_ = true;
  control_->AddFreeContainers(config_.free_containers);
  if (config_.warm_start) {
    for (const auto& g : config_.groups) control_->BootstrapGroup(g);
  } else {
    int needed = 0;
    for (const auto& g : config_.groups) needed += g.n_prefill + g.n_decode;
    control_->AddFreeContainers(needed);
    for (const auto& g : config_.groups) control_->SetupGroup(g);
  }
  if (config_.health_monitoring) control_->StartHealthMonitoring();
  ScheduleArrival(0);
  sim_.ScheduleAfter(config_.bucket_width, "audit", [this] { Audit(); });
}

void ServingCluster::RunUntil(double t_end) { sim_.RunUntil(t_end); }

const PerfProfile& ServingCluster::ProfileOf(const Request& r) const {
  return config_.profiles.at(scenarios_.at(r.scenario)->profile);
}

void ServingCluster::Violation(std::uint64_t InvariantReport::*counter,
                               std::string message) {
  ++invariants_.violations;
  ++(invariants_.*counter);
  if (invariants_.messages.size() < kMaxViolationMessages) {
    invariants_.messages.push_back(
        fmt::format("t={:.6f} {}", sim_.now(), message));
  }
}

void ServingCluster::ScheduleArrival(std::size_t index) {
  if (index >= requests_.size()) return;
  sim_.Schedule(requests_[index].arrival, "arrival", [this, index] {
    OnArrival(requests_[index].id);
    ScheduleArrival(index + 1);
  });
}

void ServingCluster::OnArrival(RequestId id) {
  Request& r = Req(id);
  Track& t = tracks_[id - 1];
  if (!r.has(Phase::kArrival)) r.Stamp(Phase::kArrival, r.arrival);
  active_.insert(id);
  metrics_.OnArrival(sim_.now());
  auto spec = scenarios_.find(r.scenario);
  if (spec == scenarios_.end() || !ScenarioMapped(r.scenario)) {
    gateway_.RecordRoutingError(id, r.scenario);
    Terminate(id, RequestStatus::kFailed);
    return;
  }
  t.ttft_timer = sim_.Schedule(r.arrival + spec->second->ttft_slo,
                               "ttft_deadline", [this, id] { OnTtftDeadline(id); });
  t.e2e_timer = sim_.Schedule(r.arrival + spec->second->e2e_timeout,
                              "e2e_deadline", [this, id] { OnE2eDeadline(id); });
  t.at_gateway = true;
  pending_[r.scenario].push_back(id);
  DispatchScenario(r.scenario);
}

void ServingCluster::OnTtftDeadline(RequestId id) {
  if (Req(id).terminal() || !tracks_[id - 1].at_gateway) return;
  // Nobody accepted it within the TTFT budget: early intervention.
  Terminate(id, RequestStatus::kTimeoutTtft);
}

void ServingCluster::OnE2eDeadline(RequestId id) {
  Terminate(id, RequestStatus::kTimeoutE2e);
}

bool ServingCluster::ScenarioMapped(const std::string& scenario) const {
  for (const auto& [name, group] : control_->groups()) {
    if (group.Serves(scenario)) return true;
  }
  return false;
}

std::vector<InstanceId> ServingCluster::Candidates(
    const std::string& scenario) const {
  std::vector<InstanceId> out;
  for (const auto& [name, view] : control_->views()) {
    if (!view.Active() || !view.Serves(scenario)) continue;
    for (InstanceId id : view.Routable(Role::kPrefill)) {
      if (prefills_.count(id)) out.push_back(id);
    }
  }
  return out;
}

OfferOutcome ServingCluster::Offer(InstanceId prefill, RequestId id) {
  PrefillInstance& p = *prefills_.at(prefill);
  if (p.mode() == PrefillMode::kReject && !p.forming().empty() &&
      Req(p.forming().front()).scenario != Req(id).scenario) {
    // Committed to another scenario's batch.
    return OfferOutcome::kRejected;
  }
  const bool idle = !p.busy();
  const OfferOutcome outcome = p.Offer(Req(id));
  if (outcome == OfferOutcome::kAccepted && p.mode() == PrefillMode::kReject &&
      !idle) {
    Violation(&InvariantReport::idle_acceptance_breaches,
              fmt::format("busy prefill {} accepted request {}", prefill, id));
  }
  return outcome;
}

void ServingCluster::DispatchScenario(const std::string& scenario) {
  auto& queue = pending_[scenario];
  const bool on_demand = config_.gateway.policy == GatewayPolicy::kOnDemand;
  if (on_demand && !queue.empty()) {
    // Keep streaming into prefills already forming a batch for this scenario.
    for (InstanceId p : Candidates(scenario)) {
      const PrefillInstance& inst = *prefills_.at(p);
      if (!inst.forming().empty() &&
          Req(inst.forming().front()).scenario == scenario) {
        FillBatch(p, scenario);
        MaybeLaunch(p);
      }
    }
  }
  while (!queue.empty()) {
    const RequestId id = queue.front();
    const std::vector<InstanceId> candidates = Candidates(scenario);
    if (candidates.empty()) break;
    auto offer = [this, id](InstanceId p) { return Offer(p, id); };
    const std::optional<InstanceId> target =
        on_demand ? gateway_.OfferRound(id, candidates, sim_.now(), offer)
                  : gateway_.Push(id, candidates, sim_.now(), offer);
    if (!target) break;
    queue.pop_front();
    Accept(id, *target);
    if (on_demand) FillBatch(*target, scenario);
    MaybeLaunch(*target);
  }
  if (!queue.empty()) ScheduleRetry(scenario);
}

void ServingCluster::ScheduleRetry(const std::string& scenario) {
  if (!retry_scheduled_.insert(scenario).second) return;
  sim_.ScheduleAfter(config_.gateway.inter_offer_delay, "gateway_retry",
                     [this, scenario] {
                       retry_scheduled_.erase(scenario);
                       DispatchScenario(scenario);
                     });
}

void ServingCluster::Accept(RequestId id, InstanceId prefill) {
  Request& r = Req(id);
  Track& t = tracks_[id - 1];
  CheckRoute(id, prefill);
  t.at_gateway = false;
  t.prefill = prefill;
  sim_.Cancel(t.ttft_timer);
  gateway_.SseOpen(prefill, id);
  r.Stamp(Phase::kAccepted, sim_.now());
  if (prefills_.at(prefill)->mode() == PrefillMode::kReject) {
    r.Advance(RequestStatus::kPrefilling);
  }
}

void ServingCluster::FillBatch(InstanceId prefill, const std::string& scenario) {
  auto& queue = pending_[scenario];
  PrefillInstance& p = *prefills_.at(prefill);
  while (!queue.empty() && !p.busy() && !p.faulted() && p.free_slots() > 0) {
    const RequestId id = queue.front();
    const OfferOutcome outcome = Offer(prefill, id);
    gateway_.LogAttempt(id, prefill, sim_.now(), outcome);
    if (outcome != OfferOutcome::kAccepted) break;
    queue.pop_front();
    Accept(id, prefill);
  }
}

void ServingCluster::CheckRoute(RequestId id, InstanceId instance) {
  const auto& removed = control_->removal_times();
  if (auto it = removed.find(instance); it != removed.end()) {
    if (sim_.now() > it->second + config_.control.propagation_delay + 1e-9) {
      Violation(&InvariantReport::routed_after_removal,
                fmt::format("request {} routed to instance {} removed at {:.6f}",
                            id, instance, it->second));
    }
  }
  const std::optional<std::string> group = control_->GroupOf(instance);
  const GroupRecord* record = group ? control_->Group(*group) : nullptr;
  if (record == nullptr || !record->Serves(Req(id).scenario)) {
    Violation(&InvariantReport::isolation_breaches,
              fmt::format("request {} of scenario '{}' reached instance {}", id,
                          Req(id).scenario, instance));
  }
}

void ServingCluster::KickPrefill(InstanceId prefill) {
  auto it = prefill_rt_.find(prefill);
  if (it == prefill_rt_.end() || it->second.kick_scheduled) return;
  it->second.kick_scheduled = true;
  sim_.ScheduleAfter(0.0, "prefill_kick", [this, prefill] {
    auto rt = prefill_rt_.find(prefill);
    if (rt == prefill_rt_.end()) return;
    rt->second.kick_scheduled = false;
    MaybeLaunch(prefill);
  });
}

void ServingCluster::MaybeLaunch(InstanceId prefill) {
  auto it = prefills_.find(prefill);
  if (it == prefills_.end()) return;
  PrefillInstance& p = *it->second;
  PrefillRuntime& rt = prefill_rt_[prefill];
  if (p.busy() || p.faulted()) return;

  RequestId head = 0;
  bool full = false;
  if (p.mode() == PrefillMode::kReject) {
    if (p.forming().empty()) return;
    head = p.forming().front();
    full = static_cast<int>(p.forming().size()) >= p.max_batch();
  } else {
    if (p.local_queue().empty() || p.free_slots() == 0) return;
    head = p.local_queue().front();
    int run = 0;
    for (RequestId id : p.local_queue()) {
      if (Req(id).scenario != Req(head).scenario) break;
      ++run;
    }
    full = std::min(run, p.free_slots()) >= p.max_batch();
  }
  const double window = config_.gateway.batch_window_factor *
                        ProfileOf(Req(head)).ttft_by_batch.At(1);
  if (!full && window > 0.0) {
    if (!rt.window.valid()) {
      rt.window = sim_.ScheduleAfter(window, "batch_window", [this, prefill] {
        auto rt_it = prefill_rt_.find(prefill);
        if (rt_it == prefill_rt_.end()) return;
        rt_it->second.window = EventHandle();
        auto p_it = prefills_.find(prefill);
        if (p_it == prefills_.end()) return;
        PrefillInstance& inst = *p_it->second;
        if (inst.busy() || inst.faulted()) return;
        if (inst.mode() == PrefillMode::kReject) {
          if (!inst.forming().empty()) Launch(prefill, inst.forming());
        } else {
          std::vector<RequestId> batch = inst.TakeQueuedBatch(
              [this](RequestId id) -> const Request& { return Req(id); });
          for (RequestId id : batch) Req(id).Advance(RequestStatus::kPrefilling);
          if (!batch.empty()) Launch(prefill, std::move(batch));
        }
      });
    }
    return;
  }
  if (p.mode() == PrefillMode::kReject) {
    Launch(prefill, p.forming());
  } else {
    std::vector<RequestId> batch = p.TakeQueuedBatch(
        [this](RequestId id) -> const Request& { return Req(id); });
    for (RequestId id : batch) Req(id).Advance(RequestStatus::kPrefilling);
    if (!batch.empty()) Launch(prefill, std::move(batch));
  }
}

void ServingCluster::Launch(InstanceId prefill, std::vector<RequestId> ids) {
  PrefillInstance& p = *prefills_.at(prefill);
  PrefillRuntime& rt = prefill_rt_[prefill];
  if (rt.window.valid()) {
    sim_.Cancel(rt.window);
    rt.window = EventHandle();
  }
  std::vector<RequestId> batch;
  std::vector<const Request*> members;
  for (RequestId id : ids) {
    Request& r = Req(id);
    if (r.terminal()) continue;
    // Timeout check before the prefill inference.
    if (sim_.now() - r.arrival > scenarios_.at(r.scenario)->ttft_slo) {
      Terminate(id, RequestStatus::kTimeoutTtft);
      continue;
    }
    batch.push_back(id);
    members.push_back(&r);
  }
  if (batch.empty()) {
    KickPrefill(prefill);
    return;
  }
  const PrefillBatch b =
      p.ExecuteBatch(members, ProfileOf(*members.front()), kv_bytes_per_token_,
                     sim_.now());
  for (RequestId id : batch) Req(id).Stamp(Phase::kPrefillStart, sim_.now());
  ++prefill_batches_;
  cache_hits_ += static_cast<std::uint64_t>(b.hits);
  cache_lookups_ += static_cast<std::uint64_t>(b.hits + b.misses);
  metrics_.OnPrefillBatch(sim_.now(), b.hits, b.misses);
  rt.executing = std::move(batch);
  rt.completion = sim_.ScheduleAfter(b.latency, "prefill_done",
                                     [this, prefill] { OnPrefillDone(prefill); });
}

void ServingCluster::OnPrefillDone(InstanceId prefill) {
  auto it = prefills_.find(prefill);
  if (it == prefills_.end()) return;
  PrefillInstance& p = *it->second;
  // A faulty instance stalls; protection cleans up once it is detected.
  if (p.faulted()) return;
  PrefillRuntime& rt = prefill_rt_[prefill];
  rt.completion = EventHandle();
  p.CompleteBatch(sim_.now());
  const std::vector<RequestId> batch = std::move(rt.executing);
  rt.executing.clear();
  for (RequestId id : batch) {
    Request& r = Req(id);
    if (r.terminal()) continue;
    r.Stamp(Phase::kPrefillEnd, sim_.now());
    // Timeout check after the prefill inference.
    if (sim_.now() - r.arrival > scenarios_.at(r.scenario)->ttft_slo) {
      Terminate(id, RequestStatus::kTimeoutTtft);
      continue;
    }
    if (!TryAdmit(id)) {
      tracks_[id - 1].awaiting_decode = true;
      awaiting_[p.group()].push_back(id);
    }
  }
  MaybeLaunch(prefill);
}

bool ServingCluster::TryAdmit(RequestId id) {
  Request& r = Req(id);
  Track& t = tracks_[id - 1];
  const std::string& group = prefills_.at(t.prefill)->group();
  const GroupRecord* view = control_->View(group);
  if (view == nullptr) return false;
  // Routable decodes first; members already being drained only take work
  // from their own group when nothing routable is left.
  std::vector<std::pair<DecodeInstance*, bool>> candidates;
  auto members = view->members.find(Role::kDecode);
  if (members == view->members.end()) return false;
  for (bool routable : {true, false}) {
    for (const auto& m : members->second) {
      if (m.routable != routable) continue;
      auto d = decodes_.find(m.id);
      if (d == decodes_.end() || d->second->faulted()) continue;
      candidates.emplace_back(d->second.get(), routable);
    }
    if (!candidates.empty()) break;
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const auto& a, const auto& b) {
                     return a.first->load() < b.first->load();
                   });
  for (bool run : {true, false}) {
    for (auto& [d, routable] : candidates) {
      if (run ? !d->CanRun() : !d->CanQueue()) continue;
      d->Admit(id, r.output_len);
      if (routable) CheckRoute(id, d->id());
      t.decode = d->id();
      t.awaiting_decode = false;
      StartTransfer(id, d->id());
      return true;
    }
  }
  return false;
}

void ServingCluster::KickAwaiting(const std::string& group) {
  if (!awaiting_kick_.insert(group).second) return;
  sim_.ScheduleAfter(0.0, "awaiting_retry", [this, group] {
    awaiting_kick_.erase(group);
    RetryAwaiting(group);
  });
}

void ServingCluster::RetryAwaiting(const std::string& group) {
  auto& queue = awaiting_[group];
  while (!queue.empty()) {
    const RequestId id = queue.front();
    if (Req(id).terminal() || !tracks_[id - 1].awaiting_decode) {
      queue.pop_front();
      continue;
    }
    if (!TryAdmit(id)) break;
    queue.pop_front();
  }
}

void ServingCluster::StartTransfer(RequestId id, InstanceId decode) {
  Request& r = Req(id);
  r.Stamp(Phase::kTransferStart, sim_.now());
  r.Advance(RequestStatus::kTransferring);
  const int concurrent = ++decode_rt_[decode].inbound_transfers;
  const std::uint64_t bytes = kv_bytes_per_token_ *
                              static_cast<std::uint64_t>(r.prompt_len);
  const int devices = config_.model.devices_per_instance;
  const RequestTransfer transfer =
      RequestTransferTime(bytes, devices, config_.transfer_mode, config_.link,
                          concurrent, &transfer_rng_);
  double seconds = transfer.xi;
  if (config_.per_layer_transfer) {
    // Layers stream out while prefill is still computing only when the
    // decode was picked right at prefill end.
    const bool overlapped = r.at(Phase::kPrefillEnd) == sim_.now();
    const double prefill_latency =
        overlapped ? r.at(Phase::kPrefillEnd) - r.at(Phase::kPrefillStart) : 0.0;
    const ContiguousLayout layout = LayoutBuffer(
        static_cast<std::uint64_t>(r.prompt_len),
        static_cast<std::uint64_t>(
            std::max(1, config_.model.hidden_size / devices)),
        static_cast<std::uint64_t>(config_.model.num_layers),
        static_cast<std::uint64_t>(config_.model.bytes_per_elem));
    double penalty = 0.0;
    for (const auto& sub : transfer.sub_transfers) {
      penalty = std::max(penalty, sub.penalty_seconds);
    }
    seconds = PerLayerExposedTime(layout, prefill_latency, config_.transfer_mode,
                                  config_.link, concurrent) +
              penalty;
  }
  const double utilization =
      seconds > 0.0 ? Utilization(transfer.bytes_per_device, seconds, config_.link)
                    : 1.0;
  transfer_stats_.conflicts += static_cast<std::uint64_t>(transfer.conflicts);
  sim_.ScheduleAfter(seconds, "transfer_done",
                     [this, id, decode, seconds, utilization] {
                       OnTransferDone(id, decode, seconds, utilization);
                     });
}

void ServingCluster::OnTransferDone(RequestId id, InstanceId decode,
                                    double seconds, double utilization) {
  if (auto rt = decode_rt_.find(decode); rt != decode_rt_.end()) {
    --rt->second.inbound_transfers;
  }
  ++transfer_stats_.count;
  transfer_stats_.sum_seconds += seconds;
  transfer_stats_.sum_sq_seconds += seconds * seconds;
  transfer_stats_.sum_utilization += utilization;
  metrics_.OnTransfer(sim_.now(), seconds, utilization);

  Request& r = Req(id);
  if (r.terminal()) return;
  Track& t = tracks_[id - 1];
  auto d = decodes_.find(decode);
  if (d == decodes_.end() || d->second->faulted()) return;
  r.Stamp(Phase::kTransferEnd, sim_.now());
  // The KVCache has left the prefill: its slot frees up.
  if (auto p = prefills_.find(t.prefill); p != prefills_.end()) {
    p->second->ReleaseSlot(id);
    KickPrefill(t.prefill);
  }
  r.Advance(RequestStatus::kDecoding);
  DecodeInstance& inst = *d->second;
  inst.OnKvArrived(id);
  const std::vector<RequestId> joined = inst.JoinIfIdle();
  MarkDecoding(joined);
  if (!joined.empty()) StartIteration(decode);
}

void ServingCluster::MarkDecoding(const std::vector<RequestId>& joined) {
  for (RequestId id : joined) Req(id).Stamp(Phase::kDecodeStart, sim_.now());
}

void ServingCluster::StartIteration(InstanceId decode) {
  DecodeInstance& d = *decodes_.at(decode);
  const int n = d.running_size();
  if (n == 0) {
    d.set_iterating(false);
    return;
  }
  d.set_iterating(true);
  double period = 0.0;
  const PerfProfile* last = nullptr;
  for (RequestId id : d.RunningIds()) {
    const PerfProfile& profile = ProfileOf(Req(id));
    if (&profile == last) continue;
    last = &profile;
    period = std::max(period, profile.tpot_by_batch.At(n));
  }
  decode_rt_[decode].iteration = sim_.ScheduleAfter(
      period, "decode_iteration", [this, decode] { OnIteration(decode); });
}

void ServingCluster::OnIteration(InstanceId decode) {
  auto it = decodes_.find(decode);
  if (it == decodes_.end()) return;
  DecodeInstance& d = *it->second;
  if (d.faulted()) return;
  decode_rt_[decode].iteration = EventHandle();
  const IterationResult result = d.CompleteIteration();
  for (RequestId id : result.completed) {
    Req(id).Stamp(Phase::kDone, sim_.now());
    Terminate(id, RequestStatus::kDone);
  }
  MarkDecoding(result.joined);
  StartIteration(decode);
  if (!result.completed.empty()) KickAwaiting(d.group());
}

void ServingCluster::Terminate(RequestId id, RequestStatus status) {
  Request& r = Req(id);
  if (r.terminal()) return;
  Track& t = tracks_[id - 1];
  if (status == RequestStatus::kFailed) r.fallback_response = kFallbackText;
  r.Finish(status);
  active_.erase(id);
  sim_.Cancel(t.ttft_timer);
  sim_.Cancel(t.e2e_timer);
  if (t.at_gateway) {
    auto& queue = pending_[r.scenario];
    queue.erase(std::remove(queue.begin(), queue.end(), id), queue.end());
    t.at_gateway = false;
    gateway_.Abandon(id);
  }
  if (gateway_.SseIsOpen(id)) gateway_.SseClose(id);
  if (t.prefill != 0) {
    if (auto p = prefills_.find(t.prefill); p != prefills_.end()) {
      if (!p->second->Withdraw(id)) p->second->ReleaseSlot(id);
      KickPrefill(t.prefill);
    }
  }
  if (t.decode != 0) {
    if (auto d = decodes_.find(t.decode); d != decodes_.end()) {
      if (d->second->Remove(id)) KickAwaiting(d->second->group());
    }
  }
  t.awaiting_decode = false;
  metrics_.OnTerminal(r, sim_.now());
}

void ServingCluster::InjectFault(InstanceId id, FaultLevel level, bool silent) {
  if (auto p = prefills_.find(id); p != prefills_.end()) {
    p->second->set_faulted(true);
  } else if (auto d = decodes_.find(id); d != decodes_.end()) {
    d->second->set_faulted(true);
  } else {
    Throw(ErrorCode::kInvalidArgument,
          fmt::format("no live instance {} to fault", id));
  }
  control_->InjectFault(id, level, silent);
}

void ServingCluster::OnInstanceStarted(const GroupRecord& group,
                                       const MemberRecord& member) {
  if (member.role == Role::kPrefill) {
    const PrefillMode mode = config_.gateway.policy == GatewayPolicy::kOnDemand
                                 ? PrefillMode::kReject
                                 : PrefillMode::kLocalQueue;
    prefills_[member.id] = std::make_unique<PrefillInstance>(
        member.id, group.name(), group.spec.batch_prefill, mode,
        config_.prefix_hbm_budget);
    prefill_rt_[member.id] = PrefillRuntime();
  } else {
    decodes_[member.id] = std::make_unique<DecodeInstance>(
        member.id, group.name(), group.spec.batch_decode,
        config_.retrieval_capacity);
    decode_rt_[member.id] = DecodeRuntime();
  }
  RecordInstanceCount();
}

void ServingCluster::OnViewPropagated(const GroupRecord& view) {
  KickAwaiting(view.name());
  for (const auto& s : view.spec.scenarios) {
    if (!pending_[s].empty()) ScheduleRetry(s);
  }
}

void ServingCluster::OnInstanceFaulted(InstanceId id) {
  std::vector<RequestId> held;
  if (auto p = prefills_.find(id); p != prefills_.end()) {
    PrefillInstance& inst = *p->second;
    inst.set_faulted(true);
    held.assign(inst.slots().begin(), inst.slots().end());
    held.insert(held.end(), inst.local_queue().begin(),
                inst.local_queue().end());
  } else if (auto d = decodes_.find(id); d != decodes_.end()) {
    DecodeInstance& inst = *d->second;
    inst.set_faulted(true);
    held = inst.Held();
    sim_.Cancel(decode_rt_[id].iteration);
    decode_rt_[id].iteration = EventHandle();
  }
  // Protection: stop the streams, answer with the fallback text, clean up.
  for (RequestId rid : held) Terminate(rid, RequestStatus::kFailed);
}

void ServingCluster::OnInstanceRecovered(InstanceId id) {
  if (auto p = prefills_.find(id); p != prefills_.end()) {
    PrefillInstance& inst = *p->second;
    inst.set_faulted(false);
    PrefillRuntime& rt = prefill_rt_[id];
    if (inst.busy()) inst.CompleteBatch(sim_.now());
    rt.executing.clear();
    rt.completion = EventHandle();
    KickPrefill(id);
    KickAwaiting(inst.group());
  } else if (auto d = decodes_.find(id); d != decodes_.end()) {
    DecodeInstance& inst = *d->second;
    inst.set_faulted(false);
    inst.set_iterating(false);
    MarkDecoding(inst.JoinIfIdle());
    StartIteration(id);
    KickAwaiting(inst.group());
  }
}

void ServingCluster::OnInstanceReleased(InstanceId id) {
  if (auto p = prefills_.find(id); p != prefills_.end()) {
    std::vector<RequestId> held(p->second->slots().begin(),
                                p->second->slots().end());
    held.insert(held.end(), p->second->local_queue().begin(),
                p->second->local_queue().end());
    for (RequestId rid : held) Terminate(rid, RequestStatus::kFailed);
    PrefillRuntime& rt = prefill_rt_[id];
    sim_.Cancel(rt.window);
    sim_.Cancel(rt.completion);
    prefills_.erase(p);
    prefill_rt_.erase(id);
  } else if (auto d = decodes_.find(id); d != decodes_.end()) {
    for (RequestId rid : d->second->Held()) {
      Terminate(rid, RequestStatus::kFailed);
    }
    sim_.Cancel(decode_rt_[id].iteration);
    decodes_.erase(d);
    decode_rt_.erase(id);
  }
  RecordInstanceCount();
}

std::size_t ServingCluster::InFlight(InstanceId id) const {
  if (auto p = prefills_.find(id); p != prefills_.end()) {
    return p->second->in_flight();
  }
  if (auto d = decodes_.find(id); d != decodes_.end()) {
    return d->second->in_flight();
  }
  return 0;
}

void ServingCluster::RecordInstanceCount() {
  const int count = static_cast<int>(prefills_.size() + decodes_.size());
  instance_steps_.emplace_back(sim_.now(), count);
  metrics_.OnInstanceCount(sim_.now(), count);
}

double ServingCluster::MeanInstances(double start, double end) const {
  if (!(end > start)) return 0.0;
  double weighted = 0.0;
  double cursor = start;
  int current = 0;
  for (const auto& [t, count] : instance_steps_) {
    if (t > end) break;
    const double at = std::max(t, start);
    weighted += current * (at - cursor);
    cursor = at;
    current = count;
  }
  weighted += current * (end - cursor);
  return weighted / (end - start);
}

std::vector<InstanceId> ServingCluster::LiveInstances() const {
  std::vector<InstanceId> ids;
  for (const auto& [id, p] : prefills_) ids.push_back(id);
  for (const auto& [id, d] : decodes_) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

void ServingCluster::Audit() {
  std::map<InstanceId, int> expected;
  for (RequestId id : active_) {
    const Request& r = Req(id);
    const Track& t = tracks_[id - 1];
    if (t.prefill != 0 && (r.status == RequestStatus::kPrefilling ||
                           r.status == RequestStatus::kTransferring)) {
      ++expected[t.prefill];
    }
  }
  for (const auto& [id, p] : prefills_) {
    const int want = expected.count(id) ? expected[id] : 0;
    if (p->occupied() != want) {
      Violation(&InvariantReport::slot_mismatches,
                fmt::format("prefill {} holds {} slots, {} requests assigned",
                            id, p->occupied(), want));
    }
    if (p->mode() == PrefillMode::kReject && !p->local_queue().empty()) {
      Violation(&InvariantReport::local_queue_in_reject_mode,
                fmt::format("reject-mode prefill {} has a local queue", id));
    }
    if (p->cache().used_bytes() > p->cache().budget()) {
      Violation(&InvariantReport::cache_over_budget,
                fmt::format("prefill {} prefix cache over budget", id));
    }
  }
  for (const auto& [name, view] : control_->views()) {
    const GroupRecord* registry = control_->Group(name);
    if (registry != nullptr && view.meta_version > registry->meta_version) {
      Violation(&InvariantReport::view_ahead_of_registry,
                fmt::format("view of '{}' at version {} ahead of registry {}",
                            name, view.meta_version, registry->meta_version));
    }
  }
  sim_.ScheduleAfter(config_.bucket_width, "audit", [this] { Audit(); });
}

void ServingCluster::FinalAudit() {
  std::uint64_t open = 0;
  for (RequestId id : active_) {
    if (gateway_.SseIsOpen(id)) ++open;
  }
  if (gateway_.opens() != gateway_.closes() + open) {
    Violation(&InvariantReport::sse_unbalanced,
              fmt::format("{} SSE opens vs {} closes with {} still open",
                          gateway_.opens(), gateway_.closes(), open));
  }
  for (const auto& [id, count] : gateway_.sse_counts()) {
    if (count < 0) {
      Violation(&InvariantReport::sse_unbalanced,
                fmt::format("negative SSE count on prefill {}", id));
    }
  }
  if (!gateway_.AttemptLogConsistent()) {
    Violation(&InvariantReport::idle_acceptance_breaches,
              "forward attempt log out of order or double acceptance");
  }
  if (sim_.stats().order_violations != 0) {
    ++invariants_.violations;
    invariants_.messages.push_back("event dispatched out of order");
  }
}

}  // namespace pdsim
