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

// Deterministic discrete-event engine. Events dispatch in (fire_time,
// sequence) order, where sequence is the insertion counter, so two runs that
// schedule the same events in the same order dispatch identically.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <random>
#include <string_view>
#include <unordered_map>

namespace pdsim {

using SimTime = double;

class EventHandle {
 public:
  EventHandle() = default;

  bool valid() const { return sequence_ != 0; }
  std::uint64_t sequence() const { return sequence_; }

 private:
  friend class Simulator;
  explicit EventHandle(std::uint64_t seq) : sequence_(seq) {}

  std::uint64_t sequence_ = 0;
};

struct RunStats {
  std::uint64_t dispatched = 0;
  std::uint64_t cancelled = 0;
  // Dispatches that went backwards in (time, sequence); always zero unless
  // the engine itself is broken.
  std::uint64_t order_violations = 0;
  SimTime clock = 0.0;
};

class Simulator {
 public:
  using Callback = std::function<void()>;

  Simulator() = default;
  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  SimTime now() const { return now_; }

  // `kind` labels the event in the event log and must outlive the event
  // (string literals in practice). Throws ErrorCode::kTimeTravel when
  // `at < now()`.
  EventHandle Schedule(SimTime at, std::string_view kind, Callback callback);
  EventHandle ScheduleAfter(SimTime delay, std::string_view kind,
                            Callback callback);

  // Returns false if the event already fired or was cancelled.
  bool Cancel(EventHandle handle);

  // Dispatches every event with fire_time <= t_end, then sets the clock to
  // exactly t_end.
  RunStats RunUntil(SimTime t_end);

  std::size_t pending() const { return queue_.size(); }
  const RunStats& stats() const { return stats_; }

  // Line-delimited "time<TAB>sequence<TAB>kind" record per dispatch.
  void set_event_log(std::ostream* out) { event_log_ = out; }

 private:
  struct Key {
    SimTime time;
    std::uint64_t sequence;
    bool operator<(const Key& other) const {
      if (time != other.time) return time < other.time;
      return sequence < other.sequence;
    }
  };
  struct Entry {
    std::string_view kind;
    Callback callback;
  };

  SimTime now_ = 0.0;
  std::uint64_t next_sequence_ = 1;
  std::map<Key, Entry> queue_;
  std::unordered_map<std::uint64_t, SimTime> scheduled_at_;
  Key last_dispatched_{-1.0, 0};
  RunStats stats_;
  std::ostream* event_log_ = nullptr;
};

using Rng = std::mt19937_64;

// Splits one run seed into independent named streams. A stream depends only
// on (seed, name), so adding a component never perturbs another's draws.
class RngStreams {
 public:
  explicit RngStreams(std::uint64_t seed) : seed_(seed) {}

  Rng Stream(std::string_view name) const;
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

// Uniform double in [0, 1) from 53 random bits.
double UniformUnit(Rng& rng);

}  // namespace pdsim
