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

// Event-driven serving cluster: gateway, prefill and decoding instances,
// KVCache transfers and the control plane wired onto one engine. Every
// request's path is arrival -> gateway -> prefill batch -> decode admission
// -> transfer -> continuous-batching decode -> done, with timeouts and fault
// protection able to end it at any step.

#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pdsim/config.h"
#include "pdsim/control_plane.h"
#include "pdsim/gateway.h"
#include "pdsim/instance.h"
#include "pdsim/metrics.h"
#include "pdsim/sim_core.h"
#include "pdsim/transfer.h"
#include "pdsim/workload.h"

namespace pdsim {

struct InvariantReport {
  std::uint64_t violations = 0;
  // First violations in detection order (bounded).
  std::vector<std::string> messages;
  std::uint64_t routed_after_removal = 0;
  std::uint64_t isolation_breaches = 0;
  std::uint64_t slot_mismatches = 0;
  std::uint64_t local_queue_in_reject_mode = 0;
  std::uint64_t view_ahead_of_registry = 0;
  std::uint64_t cache_over_budget = 0;
  std::uint64_t sse_unbalanced = 0;
  std::uint64_t idle_acceptance_breaches = 0;
};

struct TransferStats {
  std::uint64_t count = 0;
  double sum_seconds = 0.0;
  double sum_sq_seconds = 0.0;
  double sum_utilization = 0.0;
  std::uint64_t conflicts = 0;
};

class ServingCluster : public ControlPlaneObserver {
 public:
  // The config must already be valid. `requests` is the full arrival trace,
  // sorted by arrival with ids 1..N.
  ServingCluster(const RunConfig& config, std::vector<Request> requests);
  ~ServingCluster() override;
  ServingCluster(const ServingCluster&) = delete;
  ServingCluster& operator=(const ServingCluster&) = delete;

  // Brings up the configured groups and schedules arrivals and audits.
  void Start();
  void RunUntil(double t_end);

  // Marks the instance faulty now; detection follows through the control
  // plane's health machinery.
  void InjectFault(InstanceId id, FaultLevel level, bool silent);

  Simulator& sim() { return sim_; }
  ControlPlane& control_plane() { return *control_; }
  const ControlPlane& control_plane() const { return *control_; }
  const Gateway& gateway() const { return gateway_; }
  const std::vector<Request>& requests() const { return requests_; }
  const InvariantReport& invariants() const { return invariants_; }
  const TransferStats& transfers() const { return transfer_stats_; }
  MetricsFrame Metrics() const { return metrics_.Finish(); }
  // Time-weighted live instance count over [start, end).
  double MeanInstances(double start, double end) const;
  // Runs the end-of-run audits (connection balance, event order).
  void FinalAudit();

  const std::map<InstanceId, std::unique_ptr<PrefillInstance>>& prefills()
      const {
    return prefills_;
  }
  const std::map<InstanceId, std::unique_ptr<DecodeInstance>>& decodes()
      const {
    return decodes_;
  }
  // Live instance ids, ascending.
  std::vector<InstanceId> LiveInstances() const;
  std::uint64_t prefill_batches() const { return prefill_batches_; }
  std::uint64_t cache_hits() const { return cache_hits_; }
  std::uint64_t cache_lookups() const { return cache_lookups_; }

  // ControlPlaneObserver.
  void OnInstanceStarted(const GroupRecord& group,
                         const MemberRecord& member) override;
  void OnViewPropagated(const GroupRecord& view) override;
  void OnInstanceFaulted(InstanceId id) override;
  void OnInstanceRecovered(InstanceId id) override;
  void OnInstanceReleased(InstanceId id) override;
  std::size_t InFlight(InstanceId id) const override;

 private:
  struct Track {
    InstanceId prefill = 0;
    InstanceId decode = 0;
    bool at_gateway = false;
    bool awaiting_decode = false;
    EventHandle ttft_timer;
    EventHandle e2e_timer;
  };
  struct PrefillRuntime {
    EventHandle window;
    EventHandle completion;
    std::vector<RequestId> executing;
    bool kick_scheduled = false;
  };
  struct DecodeRuntime {
    EventHandle iteration;
    int inbound_transfers = 0;
  };

  Request& Req(RequestId id) { return requests_[id - 1]; }
  const Request& Req(RequestId id) const { return requests_[id - 1]; }
  const PerfProfile& ProfileOf(const Request& r) const;
  void Violation(std::uint64_t InvariantReport::*counter, std::string message);

  void ScheduleArrival(std::size_t index);
  void OnArrival(RequestId id);
  void OnTtftDeadline(RequestId id);
  void OnE2eDeadline(RequestId id);

  bool ScenarioMapped(const std::string& scenario) const;
  std::vector<InstanceId> Candidates(const std::string& scenario) const;
  OfferOutcome Offer(InstanceId prefill, RequestId id);
  void DispatchScenario(const std::string& scenario);
  void DispatchAll();
  void ScheduleRetry(const std::string& scenario);
  void Accept(RequestId id, InstanceId prefill);
  void FillBatch(InstanceId prefill, const std::string& scenario);
  void CheckRoute(RequestId id, InstanceId instance);

  void KickPrefill(InstanceId prefill);
  void MaybeLaunch(InstanceId prefill);
  void Launch(InstanceId prefill, std::vector<RequestId> ids);
  void OnPrefillDone(InstanceId prefill);

  bool TryAdmit(RequestId id);
  void RetryAwaiting(const std::string& group);
  void KickAwaiting(const std::string& group);
  void StartTransfer(RequestId id, InstanceId decode);
  void OnTransferDone(RequestId id, InstanceId decode, double seconds,
                      double utilization);
  void StartIteration(InstanceId decode);
  void OnIteration(InstanceId decode);
  void MarkDecoding(const std::vector<RequestId>& joined);

  // Ends the request with a terminal status and releases everything it
  // holds. No-op for requests already terminal.
  void Terminate(RequestId id, RequestStatus status);
  void Audit();
  void RecordInstanceCount();

  const RunConfig& config_;
  Simulator sim_;
  RngStreams streams_;
  Rng transfer_rng_;
  Gateway gateway_;
  std::unique_ptr<ControlPlane> control_;
  MetricsCollector metrics_;
  std::vector<Request> requests_;
  std::vector<Track> tracks_;
  std::map<std::string, const ScenarioSpec*> scenarios_;
  std::uint64_t kv_bytes_per_token_;

  std::map<InstanceId, std::unique_ptr<PrefillInstance>> prefills_;
  std::map<InstanceId, std::unique_ptr<DecodeInstance>> decodes_;
  std::map<InstanceId, PrefillRuntime> prefill_rt_;
  std::map<InstanceId, DecodeRuntime> decode_rt_;

  std::map<std::string, std::deque<RequestId>> pending_;
  std::set<std::string> retry_scheduled_;
  std::map<std::string, std::deque<RequestId>> awaiting_;
  std::set<std::string> awaiting_kick_;
  std::set<RequestId> active_;

  InvariantReport invariants_;
  TransferStats transfer_stats_;
  std::vector<std::pair<double, int>> instance_steps_;
  std::uint64_t prefill_batches_ = 0;
  std::uint64_t cache_hits_ = 0;
  std::uint64_t cache_lookups_ = 0;
  bool started_ = false;
};

}  // namespace pdsim
