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

#include "pdsim/sim_core.h"

#include <fmt/format.h>

#include <cmath>
#include <string>

#include "pdsim/errors.h"

namespace pdsim {

EventHandle Simulator::Schedule(SimTime at, std::string_view kind,
                                Callback callback) {
  if (!(at >= now_) || !std::isfinite(at)) {
    Throw(ErrorCode::kTimeTravel,
          fmt::format("cannot schedule '{}' at {} before now {}", kind, at,
                      now_));
  }
  const std::uint64_t seq = next_sequence_++;
  queue_.emplace(Key{at, seq}, Entry{kind, std::move(callback)});
  scheduled_at_.emplace(seq, at);
  return EventHandle(seq);
}

EventHandle Simulator::ScheduleAfter(SimTime delay, std::string_view kind,
                                     Callback callback) {
  return Schedule(now_ + delay, kind, std::move(callback));
}

bool Simulator::Cancel(EventHandle handle) {
  if (!handle.valid()) {
    return false;
  }
  auto it = scheduled_at_.find(handle.sequence());
  if (it == scheduled_at_.end()) {
    return false;
  }
  queue_.erase(Key{it->second, handle.sequence()});
  scheduled_at_.erase(it);
  ++stats_.cancelled;
  return true;
}

RunStats Simulator::RunUntil(SimTime t_end) {
  if (!(t_end >= now_)) {
    Throw(ErrorCode::kTimeTravel,
          fmt::format("run_until({}) is before now {}", t_end, now_));
  }
  while (!queue_.empty()) {
    auto it = queue_.begin();
    if (it->first.time > t_end) {
      break;
    }
    const Key key = it->first;
    Entry entry = std::move(it->second);
    queue_.erase(it);
    scheduled_at_.erase(key.sequence);

    if (key < last_dispatched_) {
      ++stats_.order_violations;
    }
    last_dispatched_ = key;
    now_ = key.time;
    ++stats_.dispatched;
    if (event_log_ != nullptr) {
      *event_log_ << fmt::format("{:.9f}\t{}\t{}\n", key.time, key.sequence,
                                 entry.kind);
    }
    entry.callback();
  }
  now_ = t_end;
  stats_.clock = now_;
  return stats_;
}

namespace {

std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t Fnv1a(std::string_view text) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

}  // namespace

Rng RngStreams::Stream(std::string_view name) const {
  return Rng(SplitMix64(seed_ ^ SplitMix64(Fnv1a(name))));
}

double UniformUnit(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace pdsim
