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

#include "pdsim/workload.h"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <tuple>

#include "json.hpp"
#include "pdsim/errors.h"

namespace pdsim {

namespace {

constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();

double Exponential(Rng& rng, double rate) {
  return -std::log1p(-UniformUnit(rng)) / rate;
}

std::size_t SampleIndex(const std::vector<double>& cumulative, Rng& rng) {
  const double u = UniformUnit(rng) * cumulative.back();
  auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  return std::min<std::size_t>(it - cumulative.begin(), cumulative.size() - 1);
}

}  // namespace

DiscreteDistribution::DiscreteDistribution(std::vector<int> values,
                                           std::vector<double> weights)
    : values_(std::move(values)), weights_(std::move(weights)) {
  Validate("distribution");
  cumulative_.resize(weights_.size());
  std::partial_sum(weights_.begin(), weights_.end(), cumulative_.begin());
}

DiscreteDistribution DiscreteDistribution::Constant(int value) {
  return DiscreteDistribution({value}, {1.0});
}

int DiscreteDistribution::Sample(Rng& rng) const {
  Require(!values_.empty(), ErrorCode::kInvalidArgument,
          "sampling an empty distribution");
  if (values_.size() == 1) {
    // Keep stream consumption uniform across distribution shapes.
    (void)rng();
    return values_.front();
  }
  return values_[SampleIndex(cumulative_, rng)];
}

double DiscreteDistribution::Probability(std::size_t index) const {
  return weights_.at(index) / cumulative_.back();
}

int DiscreteDistribution::min() const {
  Require(!values_.empty(), ErrorCode::kInvalidArgument, "empty distribution");
  return *std::min_element(values_.begin(), values_.end());
}

int DiscreteDistribution::max() const {
  Require(!values_.empty(), ErrorCode::kInvalidArgument, "empty distribution");
  return *std::max_element(values_.begin(), values_.end());
}

double DiscreteDistribution::mean() const {
  double total = 0.0;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    total += values_[i] * Probability(i);
  }
  return total;
}

void DiscreteDistribution::Validate(std::string_view name) const {
  const std::string label(name);
  if (values_.empty() || values_.size() != weights_.size()) {
    Throw(ErrorCode::kInvalidArgument,
          label + ": values and weights must be non-empty and equal length");
  }
  double total = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      Throw(ErrorCode::kInvalidArgument, label + ": weights must be >= 0");
    }
    total += w;
  }
  if (!(total > 0.0)) {
    Throw(ErrorCode::kInvalidArgument, label + ": weights sum to zero");
  }
}

void ScenarioSpec::Validate() const {
  if (id.empty()) {
    Throw(ErrorCode::kInvalidArgument, "scenario id is empty");
  }
  prompt_len.Validate(id + ".prompt_len");
  output_len.Validate(id + ".output_len");
  if (prompt_len.min() < 1 || output_len.min() < 1) {
    Throw(ErrorCode::kInvalidArgument,
          id + ": prompt and output lengths must be >= 1");
  }
  for (const auto& prefix : prefixes) {
    if (prefix.id.empty() || prefix.length < 1 || !(prefix.weight > 0.0)) {
      Throw(ErrorCode::kInvalidArgument, id + ": malformed prefix entry");
    }
    if (prefix.length >= prompt_len.min()) {
      Throw(ErrorCode::kInvalidArgument,
            id + ": prefix '" + prefix.id +
                "' must be shorter than the shortest prompt");
    }
  }
  if (!(ttft_slo > 0.0) || !(ttft_slo < e2e_timeout)) {
    Throw(ErrorCode::kInvalidArgument,
          id + ": require 0 < ttft_slo < e2e_timeout");
  }
}

void TrafficTrace::Validate() const {
  double previous = -std::numeric_limits<double>::infinity();
  for (const auto& slot : slots) {
    if (!(slot.start > previous)) {
      Throw(ErrorCode::kInvalidArgument,
            "traffic slots must be sorted by strictly increasing start");
    }
    previous = slot.start;
    for (const auto& [scenario, rate] : slot.rates) {
      if (!(rate >= 0.0) || !std::isfinite(rate)) {
        Throw(ErrorCode::kInvalidArgument,
              "traffic rate for '" + scenario + "' must be finite and >= 0");
      }
    }
  }
  if (!slots.empty() && !(end >= slots.back().start)) {
    Throw(ErrorCode::kInvalidArgument, "traffic end precedes the last slot");
  }
  if (!slots.empty() && slots.front().start < 0.0) {
    Throw(ErrorCode::kInvalidArgument, "traffic slots start before time 0");
  }
}

TrafficTrace TrafficTrace::Scaled(double multiplier) const {
  Require(multiplier >= 0.0, ErrorCode::kInvalidArgument,
          "load multiplier must be >= 0");
  TrafficTrace scaled = *this;
  for (auto& slot : scaled.slots) {
    for (auto& [scenario, rate] : slot.rates) {
      rate *= multiplier;
    }
  }
  return scaled;
}

double TrafficTrace::SlotEnd(std::size_t index) const {
  return index + 1 < slots.size() ? slots[index + 1].start : end;
}

std::string_view RequestStatusName(RequestStatus status) {
  switch (status) {
    case RequestStatus::kPending:
      return "pending";
    case RequestStatus::kPrefilling:
      return "prefilling";
    case RequestStatus::kTransferring:
      return "transferring";
    case RequestStatus::kDecoding:
      return "decoding";
    case RequestStatus::kDone:
      return "done";
    case RequestStatus::kTimeoutTtft:
      return "timeout_ttft";
    case RequestStatus::kTimeoutE2e:
      return "timeout_e2e";
    case RequestStatus::kFailed:
      return "failed";
  }
  return "unknown";
}

bool IsTerminal(RequestStatus status) {
  switch (status) {
    case RequestStatus::kDone:
    case RequestStatus::kTimeoutTtft:
    case RequestStatus::kTimeoutE2e:
    case RequestStatus::kFailed:
      return true;
    default:
      return false;
  }
}

std::string_view PhaseName(Phase phase) {
  switch (phase) {
    case Phase::kArrival:
      return "arrival";
    case Phase::kAccepted:
      return "accepted";
    case Phase::kPrefillStart:
      return "prefill_start";
    case Phase::kPrefillEnd:
      return "prefill_end";
    case Phase::kTransferStart:
      return "transfer_start";
    case Phase::kTransferEnd:
      return "transfer_end";
    case Phase::kDecodeStart:
      return "decode_start";
    case Phase::kDone:
      return "done";
    case Phase::kCount:
      break;
  }
  return "unknown";
}

Request::Request() { timestamps.fill(kUnset); }

bool Request::has(Phase phase) const {
  return !std::isnan(timestamps[static_cast<int>(phase)]);
}

double Request::at(Phase phase) const {
  return timestamps[static_cast<int>(phase)];
}

void Request::Stamp(Phase phase, double t) {
  const int index = static_cast<int>(phase);
  if (has(phase)) {
    Throw(ErrorCode::kInvalidState,
          "request " + std::to_string(id) + " phase " +
              std::string(PhaseName(phase)) + " stamped twice");
  }
  for (int i = 0; i < static_cast<int>(Phase::kCount); ++i) {
    const double other = timestamps[i];
    if (std::isnan(other)) continue;
    if ((i < index && other > t) || (i > index && other < t)) {
      Throw(ErrorCode::kInvalidState,
            "request " + std::to_string(id) + " phase " +
                std::string(PhaseName(phase)) + " breaks timestamp order");
    }
  }
  timestamps[index] = t;
}

void Request::Advance(RequestStatus next) {
  if (terminal()) {
    Throw(ErrorCode::kInvalidState,
          "request " + std::to_string(id) + " already terminal");
  }
  status = next;
}

void Request::Finish(RequestStatus terminal_status) {
  Require(IsTerminal(terminal_status), ErrorCode::kInvalidArgument,
          "Finish requires a terminal status");
  if (terminal()) {
    Throw(ErrorCode::kInvalidState, "request " + std::to_string(id) +
                                        " terminal status set twice");
  }
  status = terminal_status;
}

std::vector<Request> GenerateTrace(std::span<const ScenarioSpec> specs,
                                   const TrafficTrace& trace,
                                   std::uint64_t seed) {
  Require(!specs.empty(), ErrorCode::kInvalidArgument,
          "trace generation needs at least one scenario");
  trace.Validate();
  for (const auto& spec : specs) {
    spec.Validate();
  }

  const RngStreams streams(seed);
  // (arrival, scenario index, per-scenario ordinal) fixes a total order.
  std::vector<std::tuple<double, std::size_t, std::size_t, Request>> staged;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const ScenarioSpec& spec = specs[s];
    Rng rng = streams.Stream("workload/" + spec.id);
    std::vector<double> prefix_cumulative;
    for (const auto& prefix : spec.prefixes) {
      prefix_cumulative.push_back(
          (prefix_cumulative.empty() ? 0.0 : prefix_cumulative.back()) +
          prefix.weight);
    }
    std::size_t ordinal = 0;
    for (std::size_t i = 0; i < trace.slots.size(); ++i) {
      auto rate_it = trace.slots[i].rates.find(spec.id);
      if (rate_it == trace.slots[i].rates.end() || rate_it->second <= 0.0) {
        continue;
      }
      const double rate = rate_it->second;
      const double slot_end = trace.SlotEnd(i);
      double t = trace.slots[i].start;
      while (true) {
        t += Exponential(rng, rate);
        if (t >= slot_end) break;
        Request r;
        r.scenario = spec.id;
        r.arrival = t;
        r.prompt_len = spec.prompt_len.Sample(rng);
        if (!spec.prefixes.empty()) {
          const auto& prefix = spec.prefixes[SampleIndex(prefix_cumulative, rng)];
          r.prefix_id = prefix.id;
          r.prefix_len = prefix.length;
        }
        r.output_len = spec.output_len.Sample(rng);
        r.Stamp(Phase::kArrival, t);
        staged.emplace_back(t, s, ordinal++, std::move(r));
      }
    }
  }
  std::sort(staged.begin(), staged.end(), [](const auto& a, const auto& b) {
    return std::tie(std::get<0>(a), std::get<1>(a), std::get<2>(a)) <
           std::tie(std::get<0>(b), std::get<1>(b), std::get<2>(b));
  });
  std::vector<Request> out;
  out.reserve(staged.size());
  RequestId next_id = 1;
  for (auto& entry : staged) {
    Request& r = std::get<3>(entry);
    r.id = next_id++;
    out.push_back(std::move(r));
  }
  return out;
}

double EmpiricalMismatch(std::span<const Request> log,
                         const ClusterShape& shape) {
  shape.Validate();
  double prefill_sum = 0.0;
  double decode_sum = 0.0;
  std::size_t count = 0;
  for (const Request& r : log) {
    if (!r.has(Phase::kPrefillStart) || !r.has(Phase::kPrefillEnd) ||
        !r.has(Phase::kTransferStart) || !r.has(Phase::kDone)) {
      continue;
    }
    prefill_sum += r.at(Phase::kPrefillEnd) - r.at(Phase::kPrefillStart);
    decode_sum += r.at(Phase::kDone) - r.at(Phase::kTransferStart);
    ++count;
  }
  Require(count > 0, ErrorCode::kInvalidArgument,
          "mismatch needs at least one completed request");
  Require(prefill_sum > 0.0 && decode_sum > 0.0, ErrorCode::kInvalidArgument,
          "completed requests have zero phase durations");
  const double t_p = prefill_sum / count;
  const double t_d = decode_sum / count;
  const double prefill_capability = shape.n_prefill * shape.batch_prefill / t_p;
  const double decode_capability = shape.n_decode * shape.batch_decode / t_d;
  return prefill_capability / decode_capability;
}

void WriteTraceJsonl(std::ostream& out, std::span<const Request> requests) {
  for (const Request& r : requests) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["scenario"] = r.scenario;
    j["arrival"] = r.arrival;
    j["prompt_len"] = r.prompt_len;
    j["prefix_id"] = r.prefix_id;
    j["prefix_len"] = r.prefix_len;
    j["output_len"] = r.output_len;
    out << j.dump() << '\n';
  }
}

std::vector<Request> ReadTraceJsonl(std::istream& in) {
  std::vector<Request> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Request r;
      r.id = j.at("id").get<RequestId>();
      r.scenario = j.at("scenario").get<std::string>();
      r.arrival = j.at("arrival").get<double>();
      r.prompt_len = j.at("prompt_len").get<int>();
      r.prefix_id = j.value("prefix_id", "");
      r.prefix_len = j.value("prefix_len", 0);
      r.output_len = j.at("output_len").get<int>();
      r.Stamp(Phase::kArrival, r.arrival);
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      Throw(ErrorCode::kConfig,
            "trace line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace pdsim
