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

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pdsim/cluster.h"
#include "pdsim/config.h"
#include "pdsim/control_plane.h"
#include "pdsim/metrics.h"
#include "pdsim/perf_model.h"
#include "pdsim/workload.h"

namespace pdsim {

struct InjectedFault {
  double time = 0.0;
  InstanceId instance = 0;
  Role role = Role::kPrefill;
  std::string group;
  FaultLevel level = FaultLevel::kSubstituteRequired;
  bool silent = false;
};

struct GroupPrediction {
  std::string group;
  std::string profile;
  double offered_rps = 0.0;
  ThroughputEstimate estimate;
};

struct ExperimentResult {
  RunConfig config;
  std::vector<Request> requests;
  RunSummary summary;
  MetricsFrame metrics;
  InvariantReport invariants;
  TransferStats transfers;
  std::vector<GroupPrediction> predictions;
  std::vector<InjectedFault> faults;
  std::vector<RecoveryTranscript> recoveries;
  std::vector<WorkflowTranscript> workflows;
  std::map<std::size_t, std::uint64_t> attempt_histogram;
  std::uint64_t routing_errors = 0;
  std::uint64_t sse_opens = 0;
  std::uint64_t sse_closes = 0;
  int containers_added = 0;
  std::map<std::string, int> shortfall;
  std::uint64_t prefill_batches = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_lookups = 0;
  std::uint64_t events = 0;
  double end_time = 0.0;
  std::string snapshot;

  bool ok() const { return invariants.violations == 0; }
};

// Mean offered rate of `scenario` over [0, trace.end).
double MeanRate(const TrafficTrace& trace, const std::string& scenario);

// Validates the config, generates the trace (unless one is supplied) and
// runs the configured experiment to completion.
ExperimentResult RunExperiment(const RunConfig& config);
ExperimentResult RunExperiment(const RunConfig& config,
                               std::vector<Request> trace);

// Copy of `base` with one sweep axis set to `value`. Throws kConfig on a
// value the axis cannot take.
RunConfig ApplySweepValue(const RunConfig& base, const std::string& axis,
                          const std::string& value);

struct SweepPoint {
  std::string axis;
  std::string value;
  ExperimentResult result;
};

// Runs every value of the config's sweep on up to `threads` workers.
// Results come back in the order the values were listed.
std::vector<SweepPoint> RunSweep(const RunConfig& base, int threads);

std::string ReportJson(const ExperimentResult& result);
std::string SweepCsv(const std::vector<SweepPoint>& points);

// Index of the point with the highest per-instance throughput (first on
// ties). Throws kInvalidArgument on an empty sweep.
std::size_t SweepArgmax(const std::vector<SweepPoint>& points);

// One-line summary of the argmax. For a ratio sweep it also names the split
// the analytic model picks for the first group.
std::string SweepDigest(const std::vector<SweepPoint>& points);

// Human-readable digest of a report written by ReportJson.
std::string DescribeReport(const std::string& report_json);

}  // namespace pdsim
