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

// Analytic end-to-end model of a disaggregated prefill/decoding deployment:
// phase latencies from measured latency tables, bottleneck throughput, the
// capability-matching P/D split, prefill sizing for a given input rate, and
// KVCache byte counts.
//
// Everything here is a pure function of immutable inputs.

#pragma once

#include <cstdint>
#include <map>
#include <string_view>

namespace pdsim {

// Measured latency (seconds) per batch size. Lookups between tabulated batch
// sizes interpolate linearly; lookups outside the table throw
// ErrorCode::kBatchOutOfRange.
class LatencyTable {
 public:
  LatencyTable() = default;
  explicit LatencyTable(std::map<int, double> points);

  double At(int batch) const;

  bool empty() const { return points_.empty(); }
  int min_batch() const;
  int max_batch() const;
  const std::map<int, double>& points() const { return points_; }

  // Throws unless every batch >= 1, every latency > 0, and latency is
  // non-decreasing in batch size.
  void Validate(std::string_view name) const;

  friend bool operator==(const LatencyTable&, const LatencyTable&) = default;

 private:
  std::map<int, double> points_;
};

struct PerfProfile {
  LatencyTable ttft_by_batch;
  LatencyTable tpot_by_batch;
  // Multiplicative prefill speed-up from cached prefixes, in (0, 1].
  double prefix_benefit = 1.0;
  // Mean number of tokens generated in the decoding phase.
  double mean_generated_tokens = 1.0;
  // KVCache transfer time charged to the decoding phase (max over the
  // parallel per-device sub-transfers).
  double transfer_time = 0.0;

  void Validate() const;

  friend bool operator==(const PerfProfile&, const PerfProfile&) = default;
};

struct ClusterShape {
  int n_prefill = 1;
  int n_decode = 1;
  int batch_prefill = 1;
  int batch_decode = 1;

  int total() const { return n_prefill + n_decode; }
  void Validate() const;

  friend bool operator==(const ClusterShape&, const ClusterShape&) = default;
};

enum class Bottleneck { kTraffic, kPrefill, kDecode };

std::string_view BottleneckName(Bottleneck b);

struct ThroughputEstimate {
  double per_instance_rps = 0.0;
  Bottleneck bottleneck = Bottleneck::kTraffic;
  double t_p = 0.0;
  double t_d = 0.0;
  double e2e = 0.0;
  // The three terms of the min, in requests/second.
  double traffic_rps = 0.0;
  double prefill_rps = 0.0;
  double decode_rps = 0.0;
};

// T_p = TTFT(batch) * r_pre.
double PrefillPhaseLatency(const PerfProfile& profile, int batch);

// T_d = transfer + TPOT(batch) * G.
double DecodePhaseLatency(const PerfProfile& profile, int batch);

// Per-instance throughput when the phase latencies are already known.
ThroughputEstimate ClusterThroughputFromLatencies(double t_p, double t_d,
                                                  const ClusterShape& shape,
                                                  double input_traffic);

// min(traffic, prefill capability, decode capability) / instance count.
// Bottleneck ties resolve in the order traffic, prefill, decode.
ThroughputEstimate ClusterThroughput(const PerfProfile& profile,
                                     const ClusterShape& shape,
                                     double input_traffic);

// Integer split of `total_instances` minimising the prefill/decode
// capability mismatch. Ties prefer more decoding instances, since decoding
// holds requests for much longer than prefill does.
ClusterShape OptimalPdRatioFromLatencies(double t_p, double t_d,
                                         int batch_prefill, int batch_decode,
                                         int total_instances);

ClusterShape OptimalPdRatio(const PerfProfile& profile, int batch_prefill,
                            int batch_decode, int total_instances);

// Smallest prefill count whose capability covers `input_traffic`.
int RequiredPrefillCountFromLatency(double t_p, int batch_prefill,
                                    double input_traffic);

int RequiredPrefillCount(const PerfProfile& profile, int batch_prefill,
                         double input_traffic);

// bytes_per_elem * batch * hidden * 2 (K and V) * query_len * num_layers.
std::uint64_t KvCacheSizeBytes(std::uint64_t batch, std::uint64_t hidden_size,
                               std::uint64_t query_len,
                               std::uint64_t num_layers,
                               std::uint64_t bytes_per_elem);

}  // namespace pdsim
