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

// Time-bucketed run metrics and whole-run summaries.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pdsim/workload.h"

namespace pdsim {

struct MetricsBucket {
  double start = 0.0;
  std::uint64_t arrivals = 0;
  std::uint64_t completed = 0;
  std::uint64_t failed = 0;
  double rps = 0.0;
  double phi_per_instance = 0.0;
  // Completed over terminated; unset when nothing terminated.
  std::optional<double> success_rate;
  double mean_t_p = 0.0;
  double mean_t_d = 0.0;
  double mean_e2e = 0.0;
  double t_p_over_e2e = 0.0;
  double mean_transfer = 0.0;
  double d2d_utilization = 0.0;
  double cache_hit_rate = 0.0;
  // Time-weighted mean number of live instances.
  double instances = 0.0;
};

struct MetricsFrame {
  double bucket_width = 0.0;
  std::vector<MetricsBucket> buckets;

  // Fixed column order, fixed precision; success_rate is empty when unset.
  std::string ToCsv() const;
  static std::string CsvHeader();
};

class MetricsCollector {
 public:
  MetricsCollector(double bucket_width, double t_end);

  void OnArrival(double t);
  // `r` must carry its terminal status and timestamps.
  void OnTerminal(const Request& r, double t);
  void OnTransfer(double t, double seconds, double utilization);
  void OnPrefillBatch(double t, int hits, int misses);
  void OnInstanceCount(double t, int count);

  MetricsFrame Finish() const;

 private:
  struct Acc {
    std::uint64_t arrivals = 0;
    std::uint64_t completed = 0;
    std::uint64_t failed = 0;
    double sum_t_p = 0.0;
    double sum_t_d = 0.0;
    double sum_e2e = 0.0;
    std::uint64_t transfers = 0;
    double sum_transfer = 0.0;
    double sum_utilization = 0.0;
    std::uint64_t hits = 0;
    std::uint64_t lookups = 0;
  };

  std::size_t Index(double t) const;

  double width_;
  double t_end_;
  std::vector<Acc> acc_;
  // (time, count) steps of the live-instance count.
  std::vector<std::pair<double, int>> instance_steps_;
};

struct RunSummary {
  double window_start = 0.0;
  double window_end = 0.0;
  std::uint64_t arrivals = 0;
  std::uint64_t done = 0;
  std::uint64_t timeout_ttft = 0;
  std::uint64_t timeout_e2e = 0;
  std::uint64_t failed = 0;
  std::uint64_t unfinished = 0;
  std::optional<double> success_rate;
  // Completions per second inside the window.
  double throughput_rps = 0.0;
  double mean_instances = 0.0;
  double phi_per_instance = 0.0;
  double mean_t_p = 0.0;
  double mean_t_d = 0.0;
  double mean_e2e = 0.0;
  double tp_over_e2e = 0.0;
};

// Success counts over requests arriving in [start, end); throughput and phase
// latencies over completions inside the window. Non-terminal requests count
// as unfinished failures.
RunSummary SummarizeRequests(std::span<const Request> requests, double start,
                             double end, double mean_instances);

struct ScenarioSummary {
  std::uint64_t arrivals = 0;
  std::uint64_t done = 0;
  std::optional<double> success_rate;
  // Nearest-rank TTFT quantiles over completed requests; empty when none.
  std::optional<double> ttft_p50;
  std::optional<double> ttft_p90;
  std::optional<double> ttft_p99;
  std::optional<double> ttft_max;
};

// Per scenario, over requests arriving in [start, end).
std::map<std::string, ScenarioSummary> SummarizeScenarios(
    std::span<const Request> requests, double start, double end);

// Nearest-rank quantile of `sorted` (ascending, non-empty), q in (0, 1].
double NearestRank(std::span<const double> sorted, double q);

}  // namespace pdsim
