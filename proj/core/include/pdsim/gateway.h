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

// Gateway state: SSE connection counts used as the load hint, candidate
// ranking, the per-request forward attempt log, and the two push policies.
// Timing (retry rounds, batch windows, timeouts) is driven by the serving
// cluster; the gateway only decides who gets offered what.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pdsim/instance.h"
#include "pdsim/workload.h"

namespace pdsim {

enum class GatewayPolicy { kBaseline, kOnDemand };

std::string_view GatewayPolicyName(GatewayPolicy policy);
GatewayPolicy ParseGatewayPolicy(std::string_view name);

struct GatewayOptions {
  GatewayPolicy policy = GatewayPolicy::kOnDemand;
  int retry_subset_size = 4;
  // Pause between retry rounds for a request nobody accepted.
  double inter_offer_delay = 0.005;
  // An accepting prefill launches a partial batch after this many TTFT(1).
  double batch_window_factor = 0.1;

  void Validate() const;
  friend bool operator==(const GatewayOptions&,
                         const GatewayOptions&) = default;
};

struct ForwardAttempt {
  InstanceId prefill = 0;
  double time = 0.0;
  OfferOutcome outcome = OfferOutcome::kRejected;
};

class Gateway {
 public:
  using OfferFn = std::function<OfferOutcome(InstanceId)>;

  explicit Gateway(GatewayOptions options);

  const GatewayOptions& options() const { return options_; }

  // Ascending SSE count; equal counts keep the input order.
  std::vector<InstanceId> Rank(const std::vector<InstanceId>& prefills) const;

  // One on-demand round: offers to retry_subset_size ranked candidates one
  // after another and stops at the first acceptance. The first round for a
  // request takes the top of the ranking; each further round takes the next
  // subset, wrapping around.
  std::optional<InstanceId> OfferRound(RequestId request,
                                       const std::vector<InstanceId>& prefills,
                                       double now, const OfferFn& offer);

  // Drops retry state for a request that left the gateway unaccepted.
  void Abandon(RequestId request) { rounds_.erase(request); }

  // Baseline: one push to the least-connections prefill.
  std::optional<InstanceId> Push(RequestId request,
                                 const std::vector<InstanceId>& prefills,
                                 double now, const OfferFn& offer);

  // Offer made while filling an accepting prefill's batch.
  void LogAttempt(RequestId request, InstanceId prefill, double now,
                  OfferOutcome outcome);

  void SseOpen(InstanceId prefill, RequestId request);
  // Throws kInvalidState when the request has no open connection.
  void SseClose(RequestId request);
  bool SseIsOpen(RequestId request) const {
    return sse_owner_.count(request) > 0;
  }
  int SseCount(InstanceId prefill) const;
  std::uint64_t opens() const { return opens_; }
  std::uint64_t closes() const { return closes_; }
  const std::map<InstanceId, int>& sse_counts() const { return sse_counts_; }

  void RecordRoutingError(RequestId request, const std::string& scenario);
  std::uint64_t routing_errors() const { return routing_errors_; }

  const std::map<RequestId, std::vector<ForwardAttempt>>& attempts() const {
    return attempts_;
  }
  // Requests keyed by number of offers made for them.
  std::map<std::size_t, std::uint64_t> AttemptHistogram() const;
  // Attempt times never go backwards per request and at most one is accepted.
  bool AttemptLogConsistent() const;

 private:
  GatewayOptions options_;
  std::map<InstanceId, int> sse_counts_;
  // Rounds already tried per request still waiting at the gateway.
  std::map<RequestId, std::size_t> rounds_;
  std::map<RequestId, InstanceId> sse_owner_;
  std::map<RequestId, std::vector<ForwardAttempt>> attempts_;
  std::uint64_t opens_ = 0;
  std::uint64_t closes_ = 0;
  std::uint64_t routing_errors_ = 0;
};

}  // namespace pdsim
