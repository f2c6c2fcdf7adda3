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

#include "pdsim/gateway.h"

#include <algorithm>

#include <fmt/format.h>

#include "pdsim/errors.h"

namespace pdsim {

std::string_view GatewayPolicyName(GatewayPolicy policy) {
  return policy == GatewayPolicy::kBaseline ? "baseline" : "on_demand";
}

GatewayPolicy ParseGatewayPolicy(std::string_view name) {
  if (name == "baseline") return GatewayPolicy::kBaseline;
  if (name == "on_demand") return GatewayPolicy::kOnDemand;
  Throw(ErrorCode::kConfig,
        fmt::format("unknown gateway policy '{}' (baseline|on_demand)", name));
}

void GatewayOptions::Validate() const {
  Require(retry_subset_size >= 1, ErrorCode::kConfig,
          "retry_subset_size must be >= 1");
  Require(inter_offer_delay > 0.0, ErrorCode::kConfig,
          "inter_offer_delay must be positive");
  Require(batch_window_factor >= 0.0, ErrorCode::kConfig,
          "batch_window_factor must be >= 0");
}

Gateway::Gateway(GatewayOptions options) : options_(std::move(options)) {
  options_.Validate();
}

std::vector<InstanceId> Gateway::Rank(
    const std::vector<InstanceId>& prefills) const {
  std::vector<InstanceId> ranked = prefills;
  std::stable_sort(ranked.begin(), ranked.end(),
                   [this](InstanceId a, InstanceId b) {
                     return SseCount(a) < SseCount(b);
                   });
  return ranked;
}

std::optional<InstanceId> Gateway::OfferRound(
    RequestId request, const std::vector<InstanceId>& prefills, double now,
    const OfferFn& offer) {
  const std::vector<InstanceId> ranked = Rank(prefills);
  if (ranked.empty()) return std::nullopt;
  const std::size_t limit = std::min<std::size_t>(
      ranked.size(), static_cast<std::size_t>(options_.retry_subset_size));
  // Later rounds slide the window down the ranking so that every candidate
  // is eventually offered the request.
  std::size_t& round = rounds_[request];
  const std::size_t start = (round * limit) % ranked.size();
  ++round;
  for (std::size_t i = 0; i < limit; ++i) {
    const InstanceId target = ranked[(start + i) % ranked.size()];
    const OfferOutcome outcome = offer(target);
    LogAttempt(request, target, now, outcome);
    if (outcome == OfferOutcome::kAccepted) {
      rounds_.erase(request);
      return target;
    }
  }
  return std::nullopt;
}

std::optional<InstanceId> Gateway::Push(RequestId request,
                                        const std::vector<InstanceId>& prefills,
                                        double now, const OfferFn& offer) {
  if (prefills.empty()) return std::nullopt;
  const InstanceId target = Rank(prefills).front();
  const OfferOutcome outcome = offer(target);
  LogAttempt(request, target, now, outcome);
  if (outcome == OfferOutcome::kAccepted) return target;
  return std::nullopt;
}

void Gateway::LogAttempt(RequestId request, InstanceId prefill, double now,
                         OfferOutcome outcome) {
  attempts_[request].push_back({prefill, now, outcome});
}

void Gateway::SseOpen(InstanceId prefill, RequestId request) {
  Require(sse_owner_.count(request) == 0, ErrorCode::kInvalidState,
          "SSE connection opened twice");
  sse_owner_[request] = prefill;
  ++sse_counts_[prefill];
  ++opens_;
}

void Gateway::SseClose(RequestId request) {
  auto it = sse_owner_.find(request);
  if (it == sse_owner_.end()) {
    Throw(ErrorCode::kInvalidState,
          fmt::format("SSE close without open for request {}", request));
  }
  int& count = sse_counts_[it->second];
  Require(count > 0, ErrorCode::kInvalidState, "SSE count would go negative");
  --count;
  sse_owner_.erase(it);
  ++closes_;
}

int Gateway::SseCount(InstanceId prefill) const {
  auto it = sse_counts_.find(prefill);
  return it == sse_counts_.end() ? 0 : it->second;
}

void Gateway::RecordRoutingError(RequestId, const std::string&) {
  ++routing_errors_;
}

std::map<std::size_t, std::uint64_t> Gateway::AttemptHistogram() const {
  std::map<std::size_t, std::uint64_t> histogram;
  for (const auto& [id, list] : attempts_) ++histogram[list.size()];
  return histogram;
}

bool Gateway::AttemptLogConsistent() const {
  for (const auto& [id, list] : attempts_) {
    int accepted = 0;
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (i > 0 && list[i].time < list[i - 1].time) return false;
      if (list[i].outcome == OfferOutcome::kAccepted) ++accepted;
    }
    if (accepted > 1) return false;
  }
  return true;
}

}  // namespace pdsim
