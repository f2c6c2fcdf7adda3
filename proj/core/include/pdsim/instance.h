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

// Mock prefill and decoding engines. They hold admission, batching and cache
// state; the cluster drives them from simulator events and asks them for
// batch latencies.

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "pdsim/perf_model.h"
#include "pdsim/workload.h"

namespace pdsim {

using InstanceId = std::uint64_t;

// HBM-budgeted prefix KVCache with least-recently-used eviction.
class PrefixCache {
 public:
  explicit PrefixCache(std::uint64_t hbm_budget);

  // Hit refreshes recency; miss inserts the prefix, evicting LRU entries
  // until it fits. A prefix larger than the whole budget is never cached.
  bool Access(const std::string& prefix_id, int length, std::uint64_t size,
              double now);
  bool Contains(const std::string& prefix_id) const;

  std::uint64_t budget() const { return budget_; }
  std::uint64_t used_bytes() const { return used_bytes_; }
  std::size_t size() const { return entries_.size(); }
  std::uint64_t hits() const { return hits_; }
  std::uint64_t misses() const { return misses_; }
  std::uint64_t evictions() const { return evictions_; }

 private:
  struct Entry {
    int length = 0;
    std::uint64_t size = 0;
    double last_used = 0.0;
    std::uint64_t tick = 0;
  };

  std::uint64_t budget_;
  std::uint64_t used_bytes_ = 0;
  std::uint64_t tick_ = 0;
  std::uint64_t hits_ = 0;
  std::uint64_t misses_ = 0;
  std::uint64_t evictions_ = 0;
  std::map<std::string, Entry> entries_;
};

enum class PrefillMode { kLocalQueue, kReject };
enum class OfferOutcome { kAccepted, kRejected };

struct PrefillBatch {
  std::vector<RequestId> requests;
  double latency = 0.0;
  double factor = 1.0;
  // Prefix lookups only; requests without a prefix count as neither.
  int hits = 0;
  int misses = 0;
};

class PrefillInstance {
 public:
  PrefillInstance(InstanceId id, std::string group, int max_batch,
                  PrefillMode mode, std::uint64_t hbm_budget);

  // Reject mode: accepted iff idle with a free slot; the request joins the
  // forming batch and holds a slot. Local-queue mode: always accepted and
  // queued; the slot is taken when the request enters a batch.
  OfferOutcome Offer(const Request& request);

  // Local-queue mode: moves the longest same-scenario run at the queue head
  // (bounded by free slots) into slots and returns it.
  std::vector<RequestId> TakeQueuedBatch(
      const std::function<const Request&(RequestId)>& lookup);

  // Drops a request that has not started executing. Returns false if the
  // instance does not hold it in its queue or forming batch.
  bool Withdraw(RequestId id);

  // Starts a batch: cache lookups per request, latency TTFT(|batch|) scaled
  // by the batch's prefix-hit outcome. Throws kInvalidState when busy and
  // kInvalidArgument when the batch is empty or exceeds max_batch.
  PrefillBatch ExecuteBatch(std::span<const Request* const> batch,
                            const PerfProfile& profile,
                            std::uint64_t prefix_bytes_per_token, double now);
  void CompleteBatch(double now);

  // The request's KVCache left the instance (or the request ended).
  void ReleaseSlot(RequestId id);

  InstanceId id() const { return id_; }
  const std::string& group() const { return group_; }
  int max_batch() const { return max_batch_; }
  PrefillMode mode() const { return mode_; }
  bool busy() const { return busy_; }
  int occupied() const { return static_cast<int>(slots_.size()); }
  int free_slots() const { return max_batch_ - occupied(); }
  bool HoldsSlot(RequestId id) const { return slots_.count(id) > 0; }
  const std::vector<RequestId>& forming() const { return forming_; }
  const std::deque<RequestId>& local_queue() const { return local_queue_; }
  const std::set<RequestId>& slots() const { return slots_; }
  std::size_t in_flight() const { return slots_.size() + local_queue_.size(); }

  bool faulted() const { return faulted_; }
  void set_faulted(bool faulted) { faulted_ = faulted; }

  const PrefixCache& cache() const { return cache_; }
  std::uint64_t batches() const { return batches_; }
  std::uint64_t accepted() const { return accepted_; }
  std::uint64_t rejected() const { return rejected_; }
  double busy_seconds() const { return busy_seconds_; }

 private:
  InstanceId id_;
  std::string group_;
  int max_batch_;
  PrefillMode mode_;
  bool busy_ = false;
  bool faulted_ = false;
  double batch_started_ = 0.0;
  std::set<RequestId> slots_;
  std::vector<RequestId> forming_;
  std::deque<RequestId> local_queue_;
  PrefixCache cache_;
  std::uint64_t batches_ = 0;
  std::uint64_t accepted_ = 0;
  std::uint64_t rejected_ = 0;
  double busy_seconds_ = 0.0;
};

enum class AdmitOutcome { kRunning, kQueued, kRefused };

std::string_view AdmitOutcomeName(AdmitOutcome outcome);

struct IterationResult {
  std::vector<RequestId> completed;
  // KVCaches that became part of the running batch at this boundary.
  std::vector<RequestId> joined;
};

// Continuous-batching decoder. Admission happens at the meta exchange that
// precedes a transfer: a free running slot is reserved for the incoming
// KVCache, otherwise it waits in the small retrieval queue.
class DecodeInstance {
 public:
  DecodeInstance(InstanceId id, std::string group, int max_batch,
                 int retrieval_capacity);

  bool CanRun() const;
  bool CanQueue() const;
  AdmitOutcome Admit(RequestId id, int output_len);
  void OnKvArrived(RequestId id);

  // With nothing running, arrived KVCaches join immediately.
  std::vector<RequestId> JoinIfIdle();

  // One token per running request; finished requests leave, queued
  // KVCaches take the freed slots, and arrived ones join for the next
  // iteration.
  IterationResult CompleteIteration();

  // Drops a request wherever it is held. Returns false if unknown.
  bool Remove(RequestId id);
  // Every request held (running, incoming or queued).
  std::vector<RequestId> Held() const;

  InstanceId id() const { return id_; }
  const std::string& group() const { return group_; }
  int max_batch() const { return max_batch_; }
  int retrieval_capacity() const { return retrieval_capacity_; }
  int running_size() const { return static_cast<int>(running_.size()); }
  int incoming_size() const { return static_cast<int>(incoming_.size()); }
  int queued_size() const { return static_cast<int>(queue_.size()); }
  int load() const { return running_size() + incoming_size() + queued_size(); }
  std::size_t in_flight() const { return static_cast<std::size_t>(load()); }
  bool iterating() const { return iterating_; }
  void set_iterating(bool value) { iterating_ = value; }
  int EmittedTokens(RequestId id) const;
  std::vector<RequestId> RunningIds() const;

  bool faulted() const { return faulted_; }
  void set_faulted(bool faulted) { faulted_ = faulted; }

  std::uint64_t iterations() const { return iterations_; }
  std::uint64_t completed() const { return completed_; }
  std::uint64_t refused() const { return refused_; }

 private:
  struct Running {
    RequestId id;
    int emitted;
    int target;
  };
  struct Pending {
    RequestId id;
    int target;
    bool arrived;
  };

  void Promote();
  void JoinArrived(std::vector<RequestId>& joined);

  InstanceId id_;
  std::string group_;
  int max_batch_;
  int retrieval_capacity_;
  bool iterating_ = false;
  bool faulted_ = false;
  std::vector<Running> running_;
  std::vector<Pending> incoming_;
  std::deque<Pending> queue_;
  std::uint64_t iterations_ = 0;
  std::uint64_t completed_ = 0;
  std::uint64_t refused_ = 0;
};

}  // namespace pdsim
