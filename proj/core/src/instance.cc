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

#include <algorithm>
#include <limits>

#include "pdsim/errors.h"

namespace pdsim {

PrefixCache::PrefixCache(std::uint64_t hbm_budget) : budget_(hbm_budget) {}

bool PrefixCache::Access(const std::string& prefix_id, int length,
                         std::uint64_t size, double now) {
  auto it = entries_.find(prefix_id);
  if (it != entries_.end()) {
    it->second.last_used = now;
    it->second.tick = ++tick_;
    ++hits_;
    return true;
  }
  ++misses_;
  if (size > budget_) {
    return false;
  }
  while (used_bytes_ + size > budget_) {
    auto victim = std::min_element(
        entries_.begin(), entries_.end(), [](const auto& a, const auto& b) {
          if (a.second.last_used != b.second.last_used) {
            return a.second.last_used < b.second.last_used;
          }
          return a.second.tick < b.second.tick;
        });
    used_bytes_ -= victim->second.size;
    entries_.erase(victim);
    ++evictions_;
  }
  entries_.emplace(prefix_id, Entry{length, size, now, ++tick_});
  used_bytes_ += size;
  return false;
}

bool PrefixCache::Contains(const std::string& prefix_id) const {
  return entries_.count(prefix_id) > 0;
}

PrefillInstance::PrefillInstance(InstanceId id, std::string group,
                                 int max_batch, PrefillMode mode,
                                 std::uint64_t hbm_budget)
    : id_(id),
      group_(std::move(group)),
      max_batch_(max_batch),
      mode_(mode),
      cache_(hbm_budget) {
  Require(max_batch >= 1, ErrorCode::kInvalidArgument,
          "prefill max_batch must be >= 1");
}

OfferOutcome PrefillInstance::Offer(const Request& request) {
  if (faulted_) {
    ++rejected_;
    return OfferOutcome::kRejected;
  }
  if (mode_ == PrefillMode::kLocalQueue) {
    local_queue_.push_back(request.id);
    ++accepted_;
    return OfferOutcome::kAccepted;
  }
  if (busy_ || free_slots() <= 0) {
    ++rejected_;
    return OfferOutcome::kRejected;
  }
  slots_.insert(request.id);
  forming_.push_back(request.id);
  ++accepted_;
  return OfferOutcome::kAccepted;
}

std::vector<RequestId> PrefillInstance::TakeQueuedBatch(
    const std::function<const Request&(RequestId)>& lookup) {
  std::vector<RequestId> batch;
  if (busy_ || faulted_ || local_queue_.empty()) {
    return batch;
  }
  const std::string scenario = lookup(local_queue_.front()).scenario;
  while (!local_queue_.empty() && free_slots() > 0 &&
         lookup(local_queue_.front()).scenario == scenario) {
    const RequestId id = local_queue_.front();
    local_queue_.pop_front();
    slots_.insert(id);
    batch.push_back(id);
  }
  return batch;
}

bool PrefillInstance::Withdraw(RequestId id) {
  auto q = std::find(local_queue_.begin(), local_queue_.end(), id);
  if (q != local_queue_.end()) {
    local_queue_.erase(q);
    return true;
  }
  auto f = std::find(forming_.begin(), forming_.end(), id);
  if (f != forming_.end()) {
    forming_.erase(f);
    slots_.erase(id);
    return true;
  }
  return false;
}

PrefillBatch PrefillInstance::ExecuteBatch(
    std::span<const Request* const> batch, const PerfProfile& profile,
    std::uint64_t prefix_bytes_per_token, double now) {
  if (busy_) {
    Throw(ErrorCode::kInvalidState, "prefill instance is already executing");
  }
  if (batch.empty() || static_cast<int>(batch.size()) > max_batch_) {
    Throw(ErrorCode::kInvalidArgument,
          "prefill batch of " + std::to_string(batch.size()) +
              " outside [1, " + std::to_string(max_batch_) + "]");
  }
  PrefillBatch out;
  for (const Request* r : batch) {
    if (!HoldsSlot(r->id)) {
      Throw(ErrorCode::kInvalidState,
            "request " + std::to_string(r->id) + " has no slot on instance");
    }
    if (!r->prefix_id.empty()) {
      const bool hit = cache_.Access(
          r->prefix_id, r->prefix_len,
          prefix_bytes_per_token * static_cast<std::uint64_t>(r->prefix_len),
          now);
      (hit ? out.hits : out.misses) += 1;
    }
    out.requests.push_back(r->id);
    auto f = std::find(forming_.begin(), forming_.end(), r->id);
    if (f != forming_.end()) forming_.erase(f);
  }
  const double hit_fraction =
      static_cast<double>(out.hits) / static_cast<double>(batch.size());
  out.factor = 1.0 - hit_fraction * (1.0 - profile.prefix_benefit);
  out.latency = profile.ttft_by_batch.At(static_cast<int>(batch.size())) *
                out.factor;
  busy_ = true;
  batch_started_ = now;
  ++batches_;
  return out;
}

void PrefillInstance::CompleteBatch(double now) {
  if (!busy_) {
    Throw(ErrorCode::kInvalidState, "completing a batch on an idle prefill");
  }
  busy_ = false;
  busy_seconds_ += now - batch_started_;
}

void PrefillInstance::ReleaseSlot(RequestId id) {
  slots_.erase(id);
  auto f = std::find(forming_.begin(), forming_.end(), id);
  if (f != forming_.end()) forming_.erase(f);
}

std::string_view AdmitOutcomeName(AdmitOutcome outcome) {
  switch (outcome) {
    case AdmitOutcome::kRunning:
      return "running";
    case AdmitOutcome::kQueued:
      return "queued";
    case AdmitOutcome::kRefused:
      return "refused";
  }
  return "unknown";
}

DecodeInstance::DecodeInstance(InstanceId id, std::string group, int max_batch,
                               int retrieval_capacity)
    : id_(id),
      group_(std::move(group)),
      max_batch_(max_batch),
      retrieval_capacity_(retrieval_capacity) {
  Require(max_batch >= 1, ErrorCode::kInvalidArgument,
          "decode max_batch must be >= 1");
  Require(retrieval_capacity >= 0, ErrorCode::kInvalidArgument,
          "retrieval capacity must be >= 0");
}

bool DecodeInstance::CanRun() const {
  return !faulted_ && running_size() + incoming_size() < max_batch_;
}

bool DecodeInstance::CanQueue() const {
  return !faulted_ && queued_size() < retrieval_capacity_;
}

AdmitOutcome DecodeInstance::Admit(RequestId id, int output_len) {
  if (CanRun()) {
    incoming_.push_back({id, output_len, false});
    return AdmitOutcome::kRunning;
  }
  if (CanQueue()) {
    queue_.push_back({id, output_len, false});
    return AdmitOutcome::kQueued;
  }
  ++refused_;
  return AdmitOutcome::kRefused;
}

void DecodeInstance::OnKvArrived(RequestId id) {
  for (auto& p : incoming_) {
    if (p.id == id) {
      p.arrived = true;
      return;
    }
  }
  for (auto& p : queue_) {
    if (p.id == id) {
      p.arrived = true;
      return;
    }
  }
  Throw(ErrorCode::kInvalidState,
        "KVCache for request " + std::to_string(id) + " was never admitted");
}

void DecodeInstance::JoinArrived(std::vector<RequestId>& joined) {
  auto it = incoming_.begin();
  while (it != incoming_.end()) {
    if (it->arrived) {
      running_.push_back({it->id, 0, it->target});
      joined.push_back(it->id);
      it = incoming_.erase(it);
    } else {
      ++it;
    }
  }
}

void DecodeInstance::Promote() {
  while (!queue_.empty() && running_size() + incoming_size() < max_batch_) {
    incoming_.push_back(queue_.front());
    queue_.pop_front();
  }
}

std::vector<RequestId> DecodeInstance::JoinIfIdle() {
  std::vector<RequestId> joined;
  if (running_.empty() && !iterating_) {
    Promote();
    JoinArrived(joined);
  }
  return joined;
}

IterationResult DecodeInstance::CompleteIteration() {
  IterationResult result;
  ++iterations_;
  auto it = running_.begin();
  while (it != running_.end()) {
    ++it->emitted;
    if (it->emitted >= it->target) {
      result.completed.push_back(it->id);
      ++completed_;
      it = running_.erase(it);
    } else {
      ++it;
    }
  }
  Promote();
  JoinArrived(result.joined);
  return result;
}

bool DecodeInstance::Remove(RequestId id) {
  auto r = std::find_if(running_.begin(), running_.end(),
                        [id](const Running& x) { return x.id == id; });
  if (r != running_.end()) {
    running_.erase(r);
    return true;
  }
  auto in = std::find_if(incoming_.begin(), incoming_.end(),
                         [id](const Pending& x) { return x.id == id; });
  if (in != incoming_.end()) {
    incoming_.erase(in);
    return true;
  }
  auto q = std::find_if(queue_.begin(), queue_.end(),
                        [id](const Pending& x) { return x.id == id; });
  if (q != queue_.end()) {
    queue_.erase(q);
    return true;
  }
  return false;
}

std::vector<RequestId> DecodeInstance::Held() const {
  std::vector<RequestId> ids;
  for (const auto& r : running_) ids.push_back(r.id);
  for (const auto& p : incoming_) ids.push_back(p.id);
  for (const auto& p : queue_) ids.push_back(p.id);
  return ids;
}

int DecodeInstance::EmittedTokens(RequestId id) const {
  for (const auto& r : running_) {
    if (r.id == id) return r.emitted;
  }
  return 0;
}

std::vector<RequestId> DecodeInstance::RunningIds() const {
  std::vector<RequestId> ids;
  ids.reserve(running_.size());
  for (const auto& r : running_) ids.push_back(r.id);
  return ids;
}

}  // namespace pdsim
