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

#include "pdsim/perf_model.h"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <string>

#include "pdsim/errors.h"

namespace pdsim {

namespace {

// Relative slack used to treat two capabilities as equal.
constexpr double kTieEpsilon = 1e-12;

bool NearlyEqual(double a, double b) {
  return std::abs(a - b) <= kTieEpsilon * std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

LatencyTable::LatencyTable(std::map<int, double> points)
    : points_(std::move(points)) {}

int LatencyTable::min_batch() const {
  Require(!points_.empty(), ErrorCode::kInvalidArgument, "empty latency table");
  return points_.begin()->first;
}

int LatencyTable::max_batch() const {
  Require(!points_.empty(), ErrorCode::kInvalidArgument, "empty latency table");
  return points_.rbegin()->first;
}

double LatencyTable::At(int batch) const {
  if (points_.empty()) {
    Throw(ErrorCode::kBatchOutOfRange, "latency table is empty");
  }
  if (batch < min_batch() || batch > max_batch()) {
    Throw(ErrorCode::kBatchOutOfRange,
          "batch " + std::to_string(batch) + " outside tabulated range [" +
              std::to_string(min_batch()) + ", " + std::to_string(max_batch()) +
              "]");
  }
  auto hi = points_.lower_bound(batch);
  if (hi->first == batch) {
    return hi->second;
  }
  auto lo = std::prev(hi);
  const double frac = static_cast<double>(batch - lo->first) /
                      static_cast<double>(hi->first - lo->first);
  return lo->second + frac * (hi->second - lo->second);
}

void LatencyTable::Validate(std::string_view name) const {
  const std::string label(name);
  Require(!points_.empty(), ErrorCode::kInvalidArgument,
          (label + ": latency table is empty").c_str());
  double previous = 0.0;
  for (const auto& [batch, seconds] : points_) {
    if (batch < 1) {
      Throw(ErrorCode::kInvalidArgument, label + ": batch sizes must be >= 1");
    }
    if (!(seconds > 0.0) || !std::isfinite(seconds)) {
      Throw(ErrorCode::kInvalidArgument, label + ": latencies must be positive");
    }
    if (seconds < previous) {
      Throw(ErrorCode::kInvalidArgument,
            label + ": latency must be non-decreasing in batch size");
    }
    previous = seconds;
  }
}

void PerfProfile::Validate() const {
  ttft_by_batch.Validate("ttft");
  tpot_by_batch.Validate("tpot");
  if (!(prefix_benefit > 0.0 && prefix_benefit <= 1.0)) {
    Throw(ErrorCode::kInvalidArgument, "prefix_benefit must lie in (0, 1]");
  }
  if (!(mean_generated_tokens >= 1.0)) {
    Throw(ErrorCode::kInvalidArgument, "mean_generated_tokens must be >= 1");
  }
  if (!(transfer_time >= 0.0)) {
    Throw(ErrorCode::kInvalidArgument, "transfer_time must be >= 0");
  }
}

void ClusterShape::Validate() const {
  if (n_prefill < 1 || n_decode < 1 || batch_prefill < 1 || batch_decode < 1) {
    Throw(ErrorCode::kInvalidArgument,
          "cluster shape fields must all be >= 1");
  }
}

std::string_view BottleneckName(Bottleneck b) {
  switch (b) {
    case Bottleneck::kTraffic:
      return "traffic";
    case Bottleneck::kPrefill:
      return "prefill";
    case Bottleneck::kDecode:
      return "decode";
  }
  return "unknown";
}

double PrefillPhaseLatency(const PerfProfile& profile, int batch) {
  profile.Validate();
  return profile.ttft_by_batch.At(batch) * profile.prefix_benefit;
}

double DecodePhaseLatency(const PerfProfile& profile, int batch) {
  profile.Validate();
  return profile.transfer_time +
         profile.tpot_by_batch.At(batch) * profile.mean_generated_tokens;
}

ThroughputEstimate ClusterThroughputFromLatencies(double t_p, double t_d,
                                                  const ClusterShape& shape,
                                                  double input_traffic) {
  shape.Validate();
  Require(t_p > 0.0 && t_d > 0.0, ErrorCode::kInvalidArgument,
          "phase latencies must be positive");
  Require(input_traffic >= 0.0, ErrorCode::kInvalidArgument,
          "input traffic must be >= 0");

  ThroughputEstimate est;
  est.t_p = t_p;
  est.t_d = t_d;
  est.e2e = t_p + t_d;
  est.traffic_rps = input_traffic;
  est.prefill_rps = shape.n_prefill * shape.batch_prefill / t_p;
  est.decode_rps = shape.n_decode * shape.batch_decode / t_d;

  double numerator = est.traffic_rps;
  est.bottleneck = Bottleneck::kTraffic;
  if (est.prefill_rps < numerator && !NearlyEqual(est.prefill_rps, numerator)) {
    numerator = est.prefill_rps;
    est.bottleneck = Bottleneck::kPrefill;
  }
  if (est.decode_rps < numerator && !NearlyEqual(est.decode_rps, numerator)) {
    numerator = est.decode_rps;
    est.bottleneck = Bottleneck::kDecode;
  }
  est.per_instance_rps = numerator / shape.total();
  return est;
}

ThroughputEstimate ClusterThroughput(const PerfProfile& profile,
                                     const ClusterShape& shape,
                                     double input_traffic) {
  shape.Validate();
  return ClusterThroughputFromLatencies(
      PrefillPhaseLatency(profile, shape.batch_prefill),
      DecodePhaseLatency(profile, shape.batch_decode), shape, input_traffic);
}

ClusterShape OptimalPdRatioFromLatencies(double t_p, double t_d,
                                         int batch_prefill, int batch_decode,
                                         int total_instances) {
  Require(total_instances >= 2, ErrorCode::kInvalidArgument,
          "need at least two instances to split");
  Require(t_p > 0.0 && t_d > 0.0, ErrorCode::kInvalidArgument,
          "phase latencies must be positive");
  Require(batch_prefill >= 1 && batch_decode >= 1,
          ErrorCode::kInvalidArgument, "batch sizes must be >= 1");

  const double prefill_unit = batch_prefill / t_p;
  const double decode_unit = batch_decode / t_d;
  ClusterShape best{1, total_instances - 1, batch_prefill, batch_decode};
  double best_gap = std::abs(prefill_unit - decode_unit * (total_instances - 1));
  for (int n_p = 2; n_p < total_instances; ++n_p) {
    const int n_d = total_instances - n_p;
    const double gap = std::abs(n_p * prefill_unit - n_d * decode_unit);
    // Scanning upward in n_p means a tie keeps the earlier, decode-heavier
    // split.
    if (gap < best_gap && !NearlyEqual(gap, best_gap)) {
      best_gap = gap;
      best.n_prefill = n_p;
      best.n_decode = n_d;
    }
  }
  return best;
}

ClusterShape OptimalPdRatio(const PerfProfile& profile, int batch_prefill,
                            int batch_decode, int total_instances) {
  return OptimalPdRatioFromLatencies(
      PrefillPhaseLatency(profile, batch_prefill),
      DecodePhaseLatency(profile, batch_decode), batch_prefill, batch_decode,
      total_instances);
}

int RequiredPrefillCountFromLatency(double t_p, int batch_prefill,
                                    double input_traffic) {
  Require(input_traffic > 0.0, ErrorCode::kInvalidArgument,
          "input traffic must be > 0");
  Require(t_p > 0.0 && batch_prefill >= 1, ErrorCode::kInvalidArgument,
          "invalid prefill latency or batch");
  const double unit = batch_prefill / t_p;
  int n = std::max(1, static_cast<int>(std::ceil(input_traffic / unit)));
  // Guard against ceil landing one off because of rounding.
  while (n > 1 && (n - 1) * unit >= input_traffic) {
    --n;
  }
  while (n * unit < input_traffic && !NearlyEqual(n * unit, input_traffic)) {
    ++n;
  }
  return n;
}

int RequiredPrefillCount(const PerfProfile& profile, int batch_prefill,
                         double input_traffic) {
  return RequiredPrefillCountFromLatency(
      PrefillPhaseLatency(profile, batch_prefill), batch_prefill,
      input_traffic);
}

std::uint64_t KvCacheSizeBytes(std::uint64_t batch, std::uint64_t hidden_size,
                               std::uint64_t query_len,
                               std::uint64_t num_layers,
                               std::uint64_t bytes_per_elem) {
  Require(batch >= 1 && hidden_size >= 1 && query_len >= 1 &&
              num_layers >= 1 && bytes_per_elem >= 1,
          ErrorCode::kInvalidArgument, "KVCache dimensions must be >= 1");
  return bytes_per_elem * batch * hidden_size * 2 * query_len * num_layers;
}

}  // namespace pdsim
