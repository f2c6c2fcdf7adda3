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

// Run configuration: one JSON document describing profiles, scenarios,
// traffic, topology, policies and the experiment to run. Durations are
// written in milliseconds (suffix _ms) or seconds (suffix _s) and held in
// seconds after loading.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "pdsim/control_plane.h"
#include "pdsim/gateway.h"
#include "pdsim/perf_model.h"
#include "pdsim/transfer.h"
#include "pdsim/workload.h"

namespace pdsim {

struct ModelShape {
  int hidden_size = 5120;
  int num_layers = 40;
  int bytes_per_elem = 2;
  int devices_per_instance = 8;

  std::uint64_t KvBytesPerToken() const;
  std::uint64_t KvBytes(int tokens) const;
  void Validate() const;
  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

struct FaultPlan {
  int count = 0;
  double start = 60.0;
  double interval = 30.0;
  FaultLevel level = FaultLevel::kSubstituteRequired;
  // "any", "prefill" or "decode".
  std::string role = "any";
  bool silent = false;

  friend bool operator==(const FaultPlan&, const FaultPlan&) = default;
};

struct UpgradePlan {
  bool enabled = false;
  double start = 60.0;
  // Empty means every group, in name order.
  std::vector<std::string> groups;

  friend bool operator==(const UpgradePlan&, const UpgradePlan&) = default;
};

struct SweepSpec {
  // ratio, load, transfer_mode, block_size or policy.
  std::string axis;
  std::vector<std::string> values;

  friend bool operator==(const SweepSpec&, const SweepSpec&) = default;
};

struct RunConfig {
  // serve, fault_drill or rolling_upgrade.
  std::string experiment = "serve";
  std::uint64_t seed = 1;
  double duration = 60.0;
  // Start of the measurement window for the run summary.
  double warmup = 0.0;
  // Extra simulated time after the last arrival; negative selects the
  // largest e2e timeout.
  double drain = -1.0;
  double bucket_width = 10.0;

  ModelShape model;
  std::map<std::string, PerfProfile> profiles;
  std::vector<ScenarioSpec> scenarios;
  TrafficTrace traffic;
  std::vector<GroupSpec> groups;
  int free_containers = 0;
  // Groups start healthy instead of going through the setup workflow.
  bool warm_start = true;

  GatewayOptions gateway;
  LinkModel link;
  TransferMode transfer_mode = TransferMode::BlockFree();
  bool per_layer_transfer = false;
  std::uint64_t meta_bytes = 4096;

  std::uint64_t prefix_hbm_budget = 8ULL << 30;
  int retrieval_capacity = 1;

  ControlPlaneOptions control;
  bool health_monitoring = true;
  FaultPlan faults;
  UpgradePlan upgrade;
  SweepSpec sweep;

  // Field checks plus cross-references; throws kConfig naming the failing
  // reference.
  void Validate() const;
  double DrainSeconds() const;
  const ScenarioSpec& Scenario(std::string_view id) const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

RunConfig ParseConfig(std::string_view json_text);
RunConfig LoadConfig(const std::string& path);
std::string SerializeConfig(const RunConfig& config);

}  // namespace pdsim
