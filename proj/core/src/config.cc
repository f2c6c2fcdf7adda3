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

#include "pdsim/config.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"
#include "pdsim/errors.h"

namespace pdsim {

using nlohmann::json;
using nlohmann::ordered_json;

std::uint64_t ModelShape::KvBytesPerToken() const {
  return KvCacheSizeBytes(1, static_cast<std::uint64_t>(hidden_size), 1,
                          static_cast<std::uint64_t>(num_layers),
                          static_cast<std::uint64_t>(bytes_per_elem));
}

std::uint64_t ModelShape::KvBytes(int tokens) const {
  return KvBytesPerToken() * static_cast<std::uint64_t>(std::max(tokens, 0));
}

void ModelShape::Validate() const {
  Require(hidden_size >= 1 && num_layers >= 1 && bytes_per_elem >= 1 &&
              devices_per_instance >= 1,
          ErrorCode::kConfig, "model dimensions must all be >= 1");
}

namespace {

[[noreturn]] void ConfigError(std::string_view where, std::string_view what) {
  Throw(ErrorCode::kConfig, fmt::format("{}: {}", where, what));
}

void CheckKeys(const json& j, std::initializer_list<std::string_view> allowed,
               std::string_view where) {
  if (!j.is_object()) ConfigError(where, "expected an object");
  for (const auto& item : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) ==
        allowed.end()) {
      ConfigError(where, fmt::format("unknown key '{}'", item.key()));
    }
  }
}

template <typename T>
T Get(const json& j, const char* key, T fallback, std::string_view where) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    ConfigError(where, fmt::format("'{}': {}", key, e.what()));
  }
}

double GetMs(const json& j, const char* key, double fallback_seconds,
             std::string_view where) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback_seconds;
  return Get<double>(j, key, 0.0, where) / 1e3;
}

LatencyTable ParseTable(const json& j, std::string_view where) {
  if (!j.is_array()) ConfigError(where, "expected [[batch, ms], ...]");
  std::map<int, double> points;
  for (const auto& pair : j) {
    if (!pair.is_array() || pair.size() != 2) {
      ConfigError(where, "each entry must be [batch, ms]");
    }
    const int batch = pair[0].get<int>();
    if (!points.emplace(batch, pair[1].get<double>() / 1e3).second) {
      ConfigError(where, fmt::format("batch {} listed twice", batch));
    }
  }
  return LatencyTable(std::move(points));
}

ordered_json DumpTable(const LatencyTable& table) {
  ordered_json out = ordered_json::array();
  for (const auto& [batch, seconds] : table.points()) {
    out.push_back({batch, seconds * 1e3});
  }
  return out;
}

DiscreteDistribution ParseDist(const json& j, std::string_view where) {
  if (j.is_number_integer()) return DiscreteDistribution::Constant(j.get<int>());
  CheckKeys(j, {"values", "weights"}, where);
  auto values = Get<std::vector<int>>(j, "values", {}, where);
  auto weights = Get<std::vector<double>>(
      j, "weights", std::vector<double>(values.size(), 1.0), where);
  try {
    return DiscreteDistribution(std::move(values), std::move(weights));
  } catch (const Error& e) {
    ConfigError(where, e.what());
  }
}

ordered_json DumpDist(const DiscreteDistribution& d) {
  ordered_json out;
  out["values"] = d.values();
  out["weights"] = d.weights();
  return out;
}

LatencyRange ParseRange(const json& j, double scale, std::string_view where) {
  if (!j.is_array() || j.size() != 2) ConfigError(where, "expected [min, max]");
  return {j[0].get<double>() / scale, j[1].get<double>() / scale};
}

ordered_json DumpRange(const LatencyRange& r, double scale) {
  return ordered_json::array({r.min * scale, r.max * scale});
}

FaultLevel ParseFaultLevel(const std::string& name, std::string_view where) {
  if (name == "recoverable_in_place") return FaultLevel::kRecoverableInPlace;
  if (name == "substitute_required") return FaultLevel::kSubstituteRequired;
  ConfigError(where, fmt::format("unknown fault level '{}'", name));
}

void ParseInto(const json& root, RunConfig& c) {
  CheckKeys(root,
            {"experiment", "seed", "duration_s", "warmup_s", "drain_s",
             "bucket_s", "model", "profiles", "scenarios", "traffic",
             "groups", "free_containers", "warm_start", "gateway", "transfer",
             "instance", "control_plane", "health_monitoring", "faults",
             "upgrade", "sweep"},
            "config");
  c.experiment = Get<std::string>(root, "experiment", c.experiment, "config");
  c.seed = Get<std::uint64_t>(root, "seed", c.seed, "config");
  c.duration = Get<double>(root, "duration_s", c.duration, "config");
  c.warmup = Get<double>(root, "warmup_s", c.warmup, "config");
  c.drain = Get<double>(root, "drain_s", c.drain, "config");
  c.bucket_width = Get<double>(root, "bucket_s", c.bucket_width, "config");

  if (auto it = root.find("model"); it != root.end()) {
    const json& m = *it;
    CheckKeys(m, {"hidden_size", "num_layers", "bytes_per_elem",
                  "devices_per_instance"},
              "model");
    c.model.hidden_size = Get<int>(m, "hidden_size", c.model.hidden_size, "model");
    c.model.num_layers = Get<int>(m, "num_layers", c.model.num_layers, "model");
    c.model.bytes_per_elem =
        Get<int>(m, "bytes_per_elem", c.model.bytes_per_elem, "model");
    c.model.devices_per_instance = Get<int>(
        m, "devices_per_instance", c.model.devices_per_instance, "model");
  }

  if (auto it = root.find("profiles"); it != root.end()) {
    if (!it->is_object()) ConfigError("profiles", "expected an object");
    for (const auto& item : it->items()) {
      const std::string where = "profiles." + item.key();
      const json& p = item.value();
      CheckKeys(p, {"ttft_ms", "tpot_ms", "prefix_benefit",
                    "mean_generated_tokens", "transfer_ms"},
                where);
      PerfProfile profile;
      if (!p.contains("ttft_ms") || !p.contains("tpot_ms")) {
        ConfigError(where, "ttft_ms and tpot_ms are required");
      }
      profile.ttft_by_batch = ParseTable(p["ttft_ms"], where + ".ttft_ms");
      profile.tpot_by_batch = ParseTable(p["tpot_ms"], where + ".tpot_ms");
      profile.prefix_benefit =
          Get<double>(p, "prefix_benefit", profile.prefix_benefit, where);
      profile.mean_generated_tokens = Get<double>(
          p, "mean_generated_tokens", profile.mean_generated_tokens, where);
      profile.transfer_time =
          GetMs(p, "transfer_ms", profile.transfer_time, where);
      c.profiles[item.key()] = std::move(profile);
    }
  }

  if (auto it = root.find("scenarios"); it != root.end()) {
    if (!it->is_array()) ConfigError("scenarios", "expected an array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      const json& s = (*it)[i];
      std::string where = fmt::format("scenarios[{}]", i);
      CheckKeys(s, {"id", "profile", "prompt_len", "prefixes", "output_len",
                    "ttft_slo_ms", "e2e_timeout_ms"},
                where);
      ScenarioSpec spec;
      spec.id = Get<std::string>(s, "id", "", where);
      if (spec.id.empty()) ConfigError(where, "id is required");
      where = "scenario '" + spec.id + "'";
      spec.profile = Get<std::string>(s, "profile", spec.id, where);
      if (!s.contains("prompt_len") || !s.contains("output_len")) {
        ConfigError(where, "prompt_len and output_len are required");
      }
      spec.prompt_len = ParseDist(s["prompt_len"], where + ".prompt_len");
      spec.output_len = ParseDist(s["output_len"], where + ".output_len");
      if (auto pf = s.find("prefixes"); pf != s.end()) {
        for (const auto& p : *pf) {
          CheckKeys(p, {"id", "length", "weight"}, where + ".prefixes");
          spec.prefixes.push_back({Get<std::string>(p, "id", "", where),
                                   Get<int>(p, "length", 0, where),
                                   Get<double>(p, "weight", 1.0, where)});
        }
      }
      spec.ttft_slo = GetMs(s, "ttft_slo_ms", spec.ttft_slo, where);
      spec.e2e_timeout = GetMs(s, "e2e_timeout_ms", spec.e2e_timeout, where);
      c.scenarios.push_back(std::move(spec));
    }
  }

  c.traffic.end = c.duration;
  if (auto it = root.find("traffic"); it != root.end()) {
    const json& t = *it;
    CheckKeys(t, {"end_s", "slots"}, "traffic");
    c.traffic.end = Get<double>(t, "end_s", c.duration, "traffic");
    if (auto sl = t.find("slots"); sl != t.end()) {
      for (const auto& slot : *sl) {
        CheckKeys(slot, {"start_s", "rates"}, "traffic.slots");
        c.traffic.slots.push_back(
            {Get<double>(slot, "start_s", 0.0, "traffic.slots"),
             Get<std::map<std::string, double>>(slot, "rates", {},
                                                "traffic.slots")});
      }
    }
  }

  if (auto it = root.find("groups"); it != root.end()) {
    for (std::size_t i = 0; i < it->size(); ++i) {
      const json& g = (*it)[i];
      const std::string where = fmt::format("groups[{}]", i);
      CheckKeys(g, {"name", "service", "scenarios", "n_prefill", "n_decode",
                    "batch_prefill", "batch_decode"},
                where);
      GroupSpec spec;
      spec.name = Get<std::string>(g, "name", "", where);
      spec.service = Get<std::string>(g, "service", spec.service, where);
      spec.scenarios =
          Get<std::vector<std::string>>(g, "scenarios", {}, where);
      spec.n_prefill = Get<int>(g, "n_prefill", spec.n_prefill, where);
      spec.n_decode = Get<int>(g, "n_decode", spec.n_decode, where);
      spec.batch_prefill =
          Get<int>(g, "batch_prefill", spec.batch_prefill, where);
      spec.batch_decode = Get<int>(g, "batch_decode", spec.batch_decode, where);
      c.groups.push_back(std::move(spec));
    }
  }
  c.free_containers =
      Get<int>(root, "free_containers", c.free_containers, "config");
  c.warm_start = Get<bool>(root, "warm_start", c.warm_start, "config");

  if (auto it = root.find("gateway"); it != root.end()) {
    const json& g = *it;
    CheckKeys(g, {"policy", "retry_subset_size", "inter_offer_delay_ms",
                  "batch_window_factor"},
              "gateway");
    c.gateway.policy = ParseGatewayPolicy(Get<std::string>(
        g, "policy", std::string(GatewayPolicyName(c.gateway.policy)),
        "gateway"));
    c.gateway.retry_subset_size = Get<int>(
        g, "retry_subset_size", c.gateway.retry_subset_size, "gateway");
    c.gateway.inter_offer_delay = GetMs(
        g, "inter_offer_delay_ms", c.gateway.inter_offer_delay, "gateway");
    c.gateway.batch_window_factor = Get<double>(
        g, "batch_window_factor", c.gateway.batch_window_factor, "gateway");
  }

  if (auto it = root.find("transfer"); it != root.end()) {
    const json& t = *it;
    CheckKeys(t, {"mode", "block_size", "per_layer", "bandwidth_bytes_per_s",
                  "control_overhead_ms", "hop_conflict_prob",
                  "conflict_penalty_ms", "meta_bytes"},
              "transfer");
    const auto mode = Get<std::string>(t, "mode", "block_free", "transfer");
    if (mode == "block_free") {
      c.transfer_mode = TransferMode::BlockFree();
    } else if (mode == "block_fixed") {
      c.transfer_mode = TransferMode::BlockFixed(
          Get<std::uint64_t>(t, "block_size", 262144, "transfer"));
    } else {
      ConfigError("transfer", fmt::format("unknown mode '{}'", mode));
    }
    c.per_layer_transfer =
        Get<bool>(t, "per_layer", c.per_layer_transfer, "transfer");
    c.link.bandwidth =
        Get<double>(t, "bandwidth_bytes_per_s", c.link.bandwidth, "transfer");
    c.link.control_overhead =
        GetMs(t, "control_overhead_ms", c.link.control_overhead, "transfer");
    c.link.hop_conflict_prob = Get<double>(t, "hop_conflict_prob",
                                           c.link.hop_conflict_prob, "transfer");
    if (auto cp = t.find("conflict_penalty_ms"); cp != t.end()) {
      const LatencyRange r = ParseRange(*cp, 1e3, "transfer.conflict_penalty_ms");
      c.link.conflict_penalty_min = r.min;
      c.link.conflict_penalty_max = r.max;
    }
    c.meta_bytes = Get<std::uint64_t>(t, "meta_bytes", c.meta_bytes, "transfer");
  }

  if (auto it = root.find("instance"); it != root.end()) {
    CheckKeys(*it, {"prefix_hbm_budget_bytes", "retrieval_capacity"},
              "instance");
    c.prefix_hbm_budget = Get<std::uint64_t>(*it, "prefix_hbm_budget_bytes",
                                             c.prefix_hbm_budget, "instance");
    c.retrieval_capacity = Get<int>(*it, "retrieval_capacity",
                                    c.retrieval_capacity, "instance");
  }

  if (auto it = root.find("control_plane"); it != root.end()) {
    const json& cp = *it;
    const char* w = "control_plane";
    CheckKeys(cp, {"propagation_delay_ms", "report_latency_ms",
                   "collect_timeout_ms", "collect_retries", "connect_latency_ms",
                   "connect_timeout_ms", "storage_backend", "model_load_s",
                   "health_interval_ms", "miss_threshold",
                   "detect_poll_interval_ms", "in_place_reset_ms",
                   "drain_poll_ms"},
              w);
    ControlPlaneOptions& o = c.control;
    o.propagation_delay =
        GetMs(cp, "propagation_delay_ms", o.propagation_delay, w);
    if (cp.contains("report_latency_ms")) {
      o.report_latency = ParseRange(cp["report_latency_ms"], 1e3, w);
    }
    o.collect_timeout = GetMs(cp, "collect_timeout_ms", o.collect_timeout, w);
    o.collect_retries = Get<int>(cp, "collect_retries", o.collect_retries, w);
    if (cp.contains("connect_latency_ms")) {
      o.connect_latency = ParseRange(cp["connect_latency_ms"], 1e3, w);
    }
    o.connect_timeout = GetMs(cp, "connect_timeout_ms", o.connect_timeout, w);
    o.storage_backend =
        Get<std::string>(cp, "storage_backend", o.storage_backend, w);
    if (auto ml = cp.find("model_load_s"); ml != cp.end()) {
      o.model_load.clear();
      for (const auto& item : ml->items()) {
        CheckKeys(item.value(), {"prefill", "decode"}, "model_load_s");
        o.model_load[item.key()] = {
            ParseRange(item.value()["prefill"], 1.0, "model_load_s"),
            ParseRange(item.value()["decode"], 1.0, "model_load_s")};
      }
    }
    o.health_interval = GetMs(cp, "health_interval_ms", o.health_interval, w);
    o.miss_threshold = Get<int>(cp, "miss_threshold", o.miss_threshold, w);
    o.detect_poll_interval =
        GetMs(cp, "detect_poll_interval_ms", o.detect_poll_interval, w);
    o.in_place_reset = GetMs(cp, "in_place_reset_ms", o.in_place_reset, w);
    o.drain_poll = GetMs(cp, "drain_poll_ms", o.drain_poll, w);
  }
  c.control.devices_per_instance = c.model.devices_per_instance;
  c.health_monitoring =
      Get<bool>(root, "health_monitoring", c.health_monitoring, "config");

  if (auto it = root.find("faults"); it != root.end()) {
    const json& f = *it;
    CheckKeys(f, {"count", "start_s", "interval_s", "level", "role", "silent"},
              "faults");
    c.faults.count = Get<int>(f, "count", c.faults.count, "faults");
    c.faults.start = Get<double>(f, "start_s", c.faults.start, "faults");
    c.faults.interval =
        Get<double>(f, "interval_s", c.faults.interval, "faults");
    c.faults.level = ParseFaultLevel(
        Get<std::string>(f, "level",
                         std::string(FaultLevelName(c.faults.level)), "faults"),
        "faults");
    c.faults.role = Get<std::string>(f, "role", c.faults.role, "faults");
    c.faults.silent = Get<bool>(f, "silent", c.faults.silent, "faults");
  }

  if (auto it = root.find("upgrade"); it != root.end()) {
    CheckKeys(*it, {"enabled", "start_s", "groups"}, "upgrade");
    c.upgrade.enabled = Get<bool>(*it, "enabled", c.upgrade.enabled, "upgrade");
    c.upgrade.start = Get<double>(*it, "start_s", c.upgrade.start, "upgrade");
    c.upgrade.groups =
        Get<std::vector<std::string>>(*it, "groups", {}, "upgrade");
  }

  if (auto it = root.find("sweep"); it != root.end()) {
    CheckKeys(*it, {"axis", "values"}, "sweep");
    c.sweep.axis = Get<std::string>(*it, "axis", "", "sweep");
    if (auto v = it->find("values"); v != it->end()) {
      for (const auto& value : *v) {
        c.sweep.values.push_back(value.is_string() ? value.get<std::string>()
                                                   : value.dump());
      }
    }
  }
}

const std::set<std::string>& Experiments() {
  static const std::set<std::string> names = {"serve", "fault_drill",
                                              "rolling_upgrade"};
  return names;
}

const std::set<std::string>& SweepAxes() {
  static const std::set<std::string> names = {"ratio", "load", "transfer_mode",
                                              "block_size", "policy"};
  return names;
}

}  // namespace

double RunConfig::DrainSeconds() const {
  if (drain >= 0.0) return drain;
  double longest = 0.0;
  for (const auto& s : scenarios) longest = std::max(longest, s.e2e_timeout);
  return longest;
}

const ScenarioSpec& RunConfig::Scenario(std::string_view id) const {
  for (const auto& s : scenarios) {
    if (s.id == id) return s;
  }
  Throw(ErrorCode::kConfig, fmt::format("unknown scenario '{}'", id));
}

void RunConfig::Validate() const {
  if (!Experiments().count(experiment)) {
    ConfigError("experiment",
                fmt::format("unknown experiment '{}' "
                            "(serve|fault_drill|rolling_upgrade)",
                            experiment));
  }
  if (!(duration > 0.0) || !std::isfinite(duration)) {
    ConfigError("duration_s", "must be positive");
  }
  if (!(warmup >= 0.0) || !(warmup < duration)) {
    ConfigError("warmup_s", "must lie in [0, duration)");
  }
  if (!(bucket_width > 0.0)) ConfigError("bucket_s", "must be positive");
  if (!std::isfinite(drain)) ConfigError("drain_s", "must be finite");
  model.Validate();

  if (profiles.empty()) ConfigError("profiles", "at least one is required");
  for (const auto& [name, profile] : profiles) {
    try {
      profile.Validate();
    } catch (const Error& e) {
      ConfigError("profile '" + name + "'", e.what());
    }
  }

  if (scenarios.empty()) ConfigError("scenarios", "at least one is required");
  std::set<std::string> scenario_ids;
  for (const auto& s : scenarios) {
    const std::string where = "scenario '" + s.id + "'";
    if (!scenario_ids.insert(s.id).second) ConfigError(where, "duplicate id");
    try {
      s.Validate();
    } catch (const Error& e) {
      ConfigError(where, e.what());
    }
    if (!profiles.count(s.profile)) {
      ConfigError(where, fmt::format("references unknown profile '{}'",
                                     s.profile));
    }
  }

  try {
    traffic.Validate();
  } catch (const Error& e) {
    ConfigError("traffic", e.what());
  }
  for (const auto& slot : traffic.slots) {
    for (const auto& [id, rate] : slot.rates) {
      if (!scenario_ids.count(id)) {
        ConfigError("traffic", fmt::format("rate for unknown scenario '{}'", id));
      }
    }
  }

  if (groups.empty()) ConfigError("groups", "at least one is required");
  std::set<std::string> group_names;
  std::set<std::string> mapped;
  for (const auto& g : groups) {
    const std::string where = "group '" + g.name + "'";
    if (g.name.empty()) ConfigError("groups", "every group needs a name");
    if (!group_names.insert(g.name).second) ConfigError(where, "duplicate name");
    if (g.scenarios.empty()) ConfigError(where, "serves no scenario");
    if (g.n_prefill < 1 || g.n_decode < 1 || g.batch_prefill < 1 ||
        g.batch_decode < 1) {
      ConfigError(where, "instance counts and batch sizes must be >= 1");
    }
    for (const auto& id : g.scenarios) {
      if (!scenario_ids.count(id)) {
        ConfigError(where, fmt::format("serves unknown scenario '{}'", id));
      }
      mapped.insert(id);
      const PerfProfile& p = profiles.at(Scenario(id).profile);
      if (p.ttft_by_batch.min_batch() != 1 ||
          p.ttft_by_batch.max_batch() < g.batch_prefill) {
        ConfigError(where,
                    fmt::format("batch_prefill {} not tabulated in ttft of "
                                "profile '{}' (table must cover 1..{})",
                                g.batch_prefill, Scenario(id).profile,
                                g.batch_prefill));
      }
      if (p.tpot_by_batch.min_batch() != 1 ||
          p.tpot_by_batch.max_batch() < g.batch_decode) {
        ConfigError(where,
                    fmt::format("batch_decode {} not tabulated in tpot of "
                                "profile '{}' (table must cover 1..{})",
                                g.batch_decode, Scenario(id).profile,
                                g.batch_decode));
      }
    }
  }
  for (const auto& id : scenario_ids) {
    if (!mapped.count(id)) {
      ConfigError("scenario '" + id + "'", "is not served by any group");
    }
  }

  if (free_containers < 0) ConfigError("free_containers", "must be >= 0");
  try {
    gateway.Validate();
    link.Validate();
    control.Validate();
  } catch (const Error& e) {
    ConfigError("policies", e.what());
  }
  if (transfer_mode.kind == TransferMode::Kind::kBlockFixed &&
      transfer_mode.block_size < 1) {
    ConfigError("transfer", "block_size must be >= 1");
  }
  if (prefix_hbm_budget == 0) {
    ConfigError("instance", "prefix_hbm_budget_bytes must be positive");
  }
  if (retrieval_capacity < 0) {
    ConfigError("instance", "retrieval_capacity must be >= 0");
  }
  if (faults.count < 0) ConfigError("faults", "count must be >= 0");
  if (!(faults.interval > 0.0)) ConfigError("faults", "interval_s must be > 0");
  if (faults.role != "any" && faults.role != "prefill" &&
      faults.role != "decode") {
    ConfigError("faults", "role must be any, prefill or decode");
  }
  for (const auto& g : upgrade.groups) {
    if (!group_names.count(g)) {
      ConfigError("upgrade", fmt::format("unknown group '{}'", g));
    }
  }
  if (!sweep.axis.empty() && !SweepAxes().count(sweep.axis)) {
    ConfigError("sweep", fmt::format("unknown axis '{}'", sweep.axis));
  }
}

RunConfig ParseConfig(std::string_view json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    Throw(ErrorCode::kConfig, fmt::format("config: {}", e.what()));
  }
  RunConfig config;
  try {
    ParseInto(root, config);
  } catch (const json::exception& e) {
    Throw(ErrorCode::kConfig, fmt::format("config: {}", e.what()));
  }
  return config;
}

RunConfig LoadConfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    Throw(ErrorCode::kConfig, fmt::format("cannot open config '{}'", path));
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return ParseConfig(buffer.str());
}

std::string SerializeConfig(const RunConfig& c) {
  ordered_json root;
  root["experiment"] = c.experiment;
  root["seed"] = c.seed;
  root["duration_s"] = c.duration;
  root["warmup_s"] = c.warmup;
  root["drain_s"] = c.drain;
  root["bucket_s"] = c.bucket_width;
  root["model"] = {{"hidden_size", c.model.hidden_size},
                   {"num_layers", c.model.num_layers},
                   {"bytes_per_elem", c.model.bytes_per_elem},
                   {"devices_per_instance", c.model.devices_per_instance}};
  ordered_json profiles = ordered_json::object();
  for (const auto& [name, p] : c.profiles) {
    ordered_json jp;
    jp["ttft_ms"] = DumpTable(p.ttft_by_batch);
    jp["tpot_ms"] = DumpTable(p.tpot_by_batch);
    jp["prefix_benefit"] = p.prefix_benefit;
    jp["mean_generated_tokens"] = p.mean_generated_tokens;
    jp["transfer_ms"] = p.transfer_time * 1e3;
    profiles[name] = std::move(jp);
  }
  root["profiles"] = std::move(profiles);
  ordered_json scenarios = ordered_json::array();
  for (const auto& s : c.scenarios) {
    ordered_json js;
    js["id"] = s.id;
    js["profile"] = s.profile;
    js["prompt_len"] = DumpDist(s.prompt_len);
    ordered_json prefixes = ordered_json::array();
    for (const auto& p : s.prefixes) {
      prefixes.push_back(
          {{"id", p.id}, {"length", p.length}, {"weight", p.weight}});
    }
    js["prefixes"] = std::move(prefixes);
    js["output_len"] = DumpDist(s.output_len);
    js["ttft_slo_ms"] = s.ttft_slo * 1e3;
    js["e2e_timeout_ms"] = s.e2e_timeout * 1e3;
    scenarios.push_back(std::move(js));
  }
  root["scenarios"] = std::move(scenarios);
  ordered_json slots = ordered_json::array();
  for (const auto& slot : c.traffic.slots) {
    ordered_json rates = ordered_json::object();
    for (const auto& [id, rate] : slot.rates) rates[id] = rate;
    slots.push_back({{"start_s", slot.start}, {"rates", std::move(rates)}});
  }
  root["traffic"] = {{"end_s", c.traffic.end}, {"slots", std::move(slots)}};
  ordered_json groups = ordered_json::array();
  for (const auto& g : c.groups) {
    groups.push_back({{"name", g.name},
                      {"service", g.service},
                      {"scenarios", g.scenarios},
                      {"n_prefill", g.n_prefill},
                      {"n_decode", g.n_decode},
                      {"batch_prefill", g.batch_prefill},
                      {"batch_decode", g.batch_decode}});
  }
  root["groups"] = std::move(groups);
  root["free_containers"] = c.free_containers;
  root["warm_start"] = c.warm_start;
  root["gateway"] = {
      {"policy", GatewayPolicyName(c.gateway.policy)},
      {"retry_subset_size", c.gateway.retry_subset_size},
      {"inter_offer_delay_ms", c.gateway.inter_offer_delay * 1e3},
      {"batch_window_factor", c.gateway.batch_window_factor}};
  root["transfer"] = {
      {"mode", c.transfer_mode.name()},
      {"block_size", c.transfer_mode.block_size},
      {"per_layer", c.per_layer_transfer},
      {"bandwidth_bytes_per_s", c.link.bandwidth},
      {"control_overhead_ms", c.link.control_overhead * 1e3},
      {"hop_conflict_prob", c.link.hop_conflict_prob},
      {"conflict_penalty_ms",
       ordered_json::array({c.link.conflict_penalty_min * 1e3,
                            c.link.conflict_penalty_max * 1e3})},
      {"meta_bytes", c.meta_bytes}};
  root["instance"] = {{"prefix_hbm_budget_bytes", c.prefix_hbm_budget},
                      {"retrieval_capacity", c.retrieval_capacity}};
  const ControlPlaneOptions& o = c.control;
  ordered_json load = ordered_json::object();
  for (const auto& [backend, profile] : o.model_load) {
    load[backend] = {{"prefill", DumpRange(profile.prefill, 1.0)},
                     {"decode", DumpRange(profile.decode, 1.0)}};
  }
  root["control_plane"] = {
      {"propagation_delay_ms", o.propagation_delay * 1e3},
      {"report_latency_ms", DumpRange(o.report_latency, 1e3)},
      {"collect_timeout_ms", o.collect_timeout * 1e3},
      {"collect_retries", o.collect_retries},
      {"connect_latency_ms", DumpRange(o.connect_latency, 1e3)},
      {"connect_timeout_ms", o.connect_timeout * 1e3},
      {"storage_backend", o.storage_backend},
      {"model_load_s", std::move(load)},
      {"health_interval_ms", o.health_interval * 1e3},
      {"miss_threshold", o.miss_threshold},
      {"detect_poll_interval_ms", o.detect_poll_interval * 1e3},
      {"in_place_reset_ms", o.in_place_reset * 1e3},
      {"drain_poll_ms", o.drain_poll * 1e3}};
  root["health_monitoring"] = c.health_monitoring;
  root["faults"] = {{"count", c.faults.count},
                    {"start_s", c.faults.start},
                    {"interval_s", c.faults.interval},
                    {"level", FaultLevelName(c.faults.level)},
                    {"role", c.faults.role},
                    {"silent", c.faults.silent}};
  root["upgrade"] = {{"enabled", c.upgrade.enabled},
                     {"start_s", c.upgrade.start},
                     {"groups", c.upgrade.groups}};
  root["sweep"] = {{"axis", c.sweep.axis}, {"values", c.sweep.values}};
  return root.dump(2) + "\n";
}

}  // namespace pdsim
