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

// Scenario-tagged request traces: heterogeneous prompt/prefix/output length
// distributions per scenario and step-wise (tidal) arrival rates.

#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pdsim/perf_model.h"
#include "pdsim/sim_core.h"

namespace pdsim {

// Finite-support distribution over integer values (token counts).
class DiscreteDistribution {
 public:
  DiscreteDistribution() = default;
  DiscreteDistribution(std::vector<int> values, std::vector<double> weights);
  static DiscreteDistribution Constant(int value);

  int Sample(Rng& rng) const;

  const std::vector<int>& values() const { return values_; }
  const std::vector<double>& weights() const { return weights_; }
  double Probability(std::size_t index) const;
  int min() const;
  int max() const;
  double mean() const;

  void Validate(std::string_view name) const;

  friend bool operator==(const DiscreteDistribution&,
                         const DiscreteDistribution&) = default;

 private:
  std::vector<int> values_;
  std::vector<double> weights_;
  std::vector<double> cumulative_;
};

struct PrefixSpec {
  std::string id;
  int length = 0;
  double weight = 1.0;

  friend bool operator==(const PrefixSpec&, const PrefixSpec&) = default;
};

struct ScenarioSpec {
  std::string id;
  // Name of the PerfProfile describing this scenario's latencies.
  std::string profile;
  DiscreteDistribution prompt_len;
  std::vector<PrefixSpec> prefixes;
  DiscreteDistribution output_len;
  double ttft_slo = 1.0;
  double e2e_timeout = 60.0;

  void Validate() const;

  friend bool operator==(const ScenarioSpec&, const ScenarioSpec&) = default;
};

struct TrafficSlot {
  double start = 0.0;
  std::map<std::string, double> rates;

  friend bool operator==(const TrafficSlot&, const TrafficSlot&) = default;
};

// Step-wise arrival rates; slot i covers [slots[i].start, slots[i+1].start)
// and the last slot runs until `end`.
struct TrafficTrace {
  std::vector<TrafficSlot> slots;
  double end = 0.0;

  void Validate() const;
  TrafficTrace Scaled(double multiplier) const;
  double SlotEnd(std::size_t index) const;

  friend bool operator==(const TrafficTrace&, const TrafficTrace&) = default;
};

enum class RequestStatus {
  kPending,
  kPrefilling,
  kTransferring,
  kDecoding,
  kDone,
  kTimeoutTtft,
  kTimeoutE2e,
  kFailed,
};

std::string_view RequestStatusName(RequestStatus status);
bool IsTerminal(RequestStatus status);

enum class Phase : int {
  kArrival = 0,
  kAccepted,
  kPrefillStart,
  kPrefillEnd,
  kTransferStart,
  kTransferEnd,
  kDecodeStart,
  kDone,
  kCount,
};

std::string_view PhaseName(Phase phase);

using RequestId = std::uint64_t;

struct Request {
  RequestId id = 0;
  std::string scenario;
  int prompt_len = 0;
  std::string prefix_id;
  int prefix_len = 0;
  // Tokens generated in decoding. Decoders observe it only through
  // per-iteration completion checks.
  int output_len = 0;
  double arrival = 0.0;
  std::array<double, static_cast<int>(Phase::kCount)> timestamps;
  RequestStatus status = RequestStatus::kPending;
  // Text returned in place of generated tokens when a fault terminates the
  // request.
  std::string fallback_response;

  Request();

  bool has(Phase phase) const;
  double at(Phase phase) const;
  // Records the phase time. Throws kInvalidState if it would precede an
  // already stamped earlier phase or the phase was stamped before.
  void Stamp(Phase phase, double t);
  // Moves to a non-terminal status; throws if already terminal.
  void Advance(RequestStatus next);
  // Sets the terminal status; throws kInvalidState if already terminal.
  void Finish(RequestStatus terminal);
  bool terminal() const { return IsTerminal(status); }
};

// Poisson arrivals per scenario per slot, deterministic for a given seed.
// Each scenario draws from its own named stream.
std::vector<Request> GenerateTrace(std::span<const ScenarioSpec> specs,
                                   const TrafficTrace& trace,
                                   std::uint64_t seed);

// Measured prefill capability over measured decode capability, each in
// batches per second across the shape's instances. Uses requests that have
// both prefill and completion timestamps.
double EmpiricalMismatch(std::span<const Request> log,
                         const ClusterShape& shape);

void WriteTraceJsonl(std::ostream& out, std::span<const Request> requests);
std::vector<Request> ReadTraceJsonl(std::istream& in);

}  // namespace pdsim
