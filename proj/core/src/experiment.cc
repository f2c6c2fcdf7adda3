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

#include "pdsim/experiment.h"

#include <algorithm>
#include <future>
#include <sstream>
#include <utility>

#include <fmt/format.h>

#include "json.hpp"
#include "pdsim/errors.h"
#include "pdsim/sim_core.h"

namespace pdsim {

namespace {

using Json = nlohmann::ordered_json;

Json Optional(const std::optional<double>& v) {
  return v ? Json(*v) : Json(nullptr);
}

// Picks a live, routable, not yet faulty instance of the requested role.
std::optional<InjectedFault> PickFaultTarget(ServingCluster& cluster,
                                             const FaultPlan& plan, Rng& rng) {
  std::vector<InjectedFault> pool;
  for (const auto& [name, group] : cluster.control_plane().groups()) {
    if (!group.Active()) continue;
    for (const auto& [role, members] : group.members) {
      if (plan.role != "any" && plan.role != RoleName(role)) continue;
      for (const auto& m : members) {
        if (!m.routable || m.faulted) continue;
        const bool live = role == Role::kPrefill
                              ? cluster.prefills().count(m.id) > 0
                              : cluster.decodes().count(m.id) > 0;
        if (!live) continue;
        InjectedFault f;
        f.instance = m.id;
        f.role = role;
        f.group = name;
        pool.push_back(f);
      }
    }
  }
  if (pool.empty()) return std::nullopt;
  std::sort(pool.begin(), pool.end(),
            [](const auto& a, const auto& b) { return a.instance < b.instance; });
  const auto index = std::min(
      pool.size() - 1,
      static_cast<std::size_t>(UniformUnit(rng) * static_cast<double>(pool.size())));
  return pool[index];
}

void ScheduleFaults(ServingCluster& cluster, const FaultPlan& plan,
                    std::vector<InjectedFault>& log, Rng& rng) {
  for (int k = 0; k < plan.count; ++k) {
    const double at = plan.start + k * plan.interval;
    cluster.sim().Schedule(at, "fault_injection", [&cluster, &plan, &log, &rng] {
      std::optional<InjectedFault> target = PickFaultTarget(cluster, plan, rng);
      if (!target) return;
      target->time = cluster.sim().now();
      target->level = plan.level;
      target->silent = plan.silent;
      cluster.InjectFault(target->instance, plan.level, plan.silent);
      log.push_back(*target);
    });
  }
}

Json TranscriptJson(const std::vector<TranscriptEntry>& entries) {
  Json out = Json::array();
  for (const auto& e : entries) {
    out.push_back({{"t", e.time}, {"step", e.step}, {"detail", e.detail}});
  }
  return out;
}

}  // namespace

double MeanRate(const TrafficTrace& trace, const std::string& scenario) {
  if (!(trace.end > 0.0)) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < trace.slots.size(); ++i) {
    auto it = trace.slots[i].rates.find(scenario);
    if (it == trace.slots[i].rates.end()) continue;
    const double start = std::min(trace.slots[i].start, trace.end);
    const double end = std::min(trace.SlotEnd(i), trace.end);
    total += it->second * std::max(0.0, end - start);
  }
  return total / trace.end;
}

ExperimentResult RunExperiment(const RunConfig& config) {
  config.Validate();
  return RunExperiment(config,
                       GenerateTrace(config.scenarios, config.traffic, config.seed));
}

ExperimentResult RunExperiment(const RunConfig& config,
                               std::vector<Request> trace) {
  config.Validate();
  ExperimentResult result;
  result.config = config;

  ServingCluster cluster(config, std::move(trace));
  cluster.Start();

  Rng fault_rng = RngStreams(config.seed).Stream("fault_drill");
  if (config.experiment == "fault_drill") {
    ScheduleFaults(cluster, config.faults, result.faults, fault_rng);
  }
  if (config.experiment == "rolling_upgrade" || config.upgrade.enabled) {
    cluster.sim().Schedule(config.upgrade.start, "rolling_upgrade",
                           [&cluster, &config] {
                             ControlPlane& cp = cluster.control_plane();
                             cp.RollingUpgrade(config.upgrade.groups.empty()
                                                   ? cp.GroupNames()
                                                   : config.upgrade.groups);
                           });
  }

  result.end_time = config.duration + config.DrainSeconds();
  cluster.RunUntil(result.end_time);
  cluster.FinalAudit();

  result.requests = cluster.requests();
  const double window_start = std::min(config.warmup, config.duration);
  result.summary =
      SummarizeRequests(result.requests, window_start, config.duration,
                        cluster.MeanInstances(window_start, config.duration));
  result.metrics = cluster.Metrics();
  result.invariants = cluster.invariants();
  result.transfers = cluster.transfers();

  for (const auto& g : config.groups) {
    GroupPrediction p;
    p.group = g.name;
    // Groups sharing a scenario split its traffic by prefill count.
    for (const auto& s : g.scenarios) {
      int sharing = 0;
      for (const auto& other : config.groups) {
        if (std::count(other.scenarios.begin(), other.scenarios.end(), s)) {
          sharing += other.n_prefill;
        }
      }
      p.offered_rps += MeanRate(config.traffic, s) * g.n_prefill / sharing;
    }
    if (!g.scenarios.empty()) {
      p.profile = config.Scenario(g.scenarios.front()).profile;
      ClusterShape shape;
      shape.n_prefill = g.n_prefill;
      shape.n_decode = g.n_decode;
      shape.batch_prefill = g.batch_prefill;
      shape.batch_decode = g.batch_decode;
      p.estimate =
          ClusterThroughput(config.profiles.at(p.profile), shape, p.offered_rps);
    }
    result.predictions.push_back(std::move(p));
  }

  const ControlPlane& cp = cluster.control_plane();
  result.recoveries.assign(cp.recoveries().begin(), cp.recoveries().end());
  result.workflows.assign(cp.workflows().begin(), cp.workflows().end());
  result.containers_added = cp.containers_added();
  result.shortfall = cp.shortfall();
  result.snapshot = cp.DumpSnapshot();

  const Gateway& gw = cluster.gateway();
  result.attempt_histogram = gw.AttemptHistogram();
  result.routing_errors = gw.routing_errors();
  result.sse_opens = gw.opens();
  result.sse_closes = gw.closes();
  result.prefill_batches = cluster.prefill_batches();
  result.cache_hits = cluster.cache_hits();
  result.cache_lookups = cluster.cache_lookups();
  result.events = cluster.sim().stats().dispatched;
  return result;
}

RunConfig ApplySweepValue(const RunConfig& base, const std::string& axis,
                          const std::string& value) {
  RunConfig c = base;
  auto fail = [&](const std::string& why) {
    Throw(ErrorCode::kConfig,
          fmt::format("sweep {}='{}': {}", axis, value, why));
  };
  auto number = [&]() {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(value, &used);
    } catch (const std::exception&) {
      fail("not a number");
    }
    if (used != value.size()) fail("not a number");
    return v;
  };
  if (axis == "ratio") {
    const auto colon = value.find(':');
    if (colon == std::string::npos) fail("expected P:D");
    int np = 0;
    int nd = 0;
    try {
      np = std::stoi(value.substr(0, colon));
      nd = std::stoi(value.substr(colon + 1));
    } catch (const std::exception&) {
      fail("expected P:D");
    }
    for (auto& g : c.groups) {
      g.n_prefill = np;
      g.n_decode = nd;
    }
  } else if (axis == "load") {
    const double m = number();
    if (!(m > 0.0)) fail("load multiplier must be > 0");
    c.traffic = c.traffic.Scaled(m);
  } else if (axis == "transfer_mode") {
    if (value == "block_free") {
      c.transfer_mode = TransferMode::BlockFree();
    } else if (value == "block_fixed") {
      c.transfer_mode = TransferMode::BlockFixed(
          c.transfer_mode.block_size > 0 ? c.transfer_mode.block_size : 262144);
    } else {
      fail("expected block_free or block_fixed");
    }
  } else if (axis == "block_size") {
    const double v = number();
    if (!(v >= 1.0)) fail("block size must be >= 1");
    c.transfer_mode = TransferMode::BlockFixed(static_cast<std::uint64_t>(v));
  } else if (axis == "policy") {
    c.gateway.policy = ParseGatewayPolicy(value);
  } else {
    fail("unknown axis");
  }
  c.sweep = SweepSpec();
  c.Validate();
  return c;
}

std::vector<SweepPoint> RunSweep(const RunConfig& base, int threads) {
  Require(!base.sweep.axis.empty(), ErrorCode::kConfig,
          "config has no sweep section");
  std::vector<SweepPoint> points;
  std::vector<RunConfig> configs;
  for (const auto& v : base.sweep.values) {
    configs.push_back(ApplySweepValue(base, base.sweep.axis, v));
    points.push_back({base.sweep.axis, v, {}});
  }
  const std::size_t workers = static_cast<std::size_t>(std::max(1, threads));
  for (std::size_t first = 0; first < configs.size(); first += workers) {
    std::vector<std::future<ExperimentResult>> running;
    const std::size_t last = std::min(configs.size(), first + workers);
    for (std::size_t i = first; i < last; ++i) {
      running.push_back(std::async(std::launch::async, [&configs, i] {
        return RunExperiment(configs[i]);
      }));
    }
    for (std::size_t i = first; i < last; ++i) {
      points[i].result = running[i - first].get();
    }
  }
  return points;
}

std::string ReportJson(const ExperimentResult& r) {
  Json out;
  out["experiment"] = r.config.experiment;
  out["seed"] = r.config.seed;
  out["duration_s"] = r.config.duration;
  out["end_time_s"] = r.end_time;
  out["ok"] = r.ok();

  const RunSummary& s = r.summary;
  out["summary"] = {
      {"window_start_s", s.window_start},
      {"window_end_s", s.window_end},
      {"arrivals", s.arrivals},
      {"done", s.done},
      {"timeout_ttft", s.timeout_ttft},
      {"timeout_e2e", s.timeout_e2e},
      {"failed", s.failed},
      {"unfinished", s.unfinished},
      {"success_rate", Optional(s.success_rate)},
      {"throughput_rps", s.throughput_rps},
      {"mean_instances", s.mean_instances},
      {"phi_per_instance", s.phi_per_instance},
      {"mean_t_p_s", s.mean_t_p},
      {"mean_t_d_s", s.mean_t_d},
      {"mean_e2e_s", s.mean_e2e},
      {"t_p_over_e2e", s.tp_over_e2e},
  };

  Json scenarios = Json::object();
  for (const auto& [name, sc] :
       SummarizeScenarios(r.requests, s.window_start, s.window_end)) {
    scenarios[name] = {
        {"arrivals", sc.arrivals},
        {"done", sc.done},
        {"success_rate", Optional(sc.success_rate)},
        {"ttft_p50_s", Optional(sc.ttft_p50)},
        {"ttft_p90_s", Optional(sc.ttft_p90)},
        {"ttft_p99_s", Optional(sc.ttft_p99)},
        {"ttft_max_s", Optional(sc.ttft_max)},
    };
  }
  out["scenarios"] = scenarios;

  Json predictions = Json::array();
  for (const auto& p : r.predictions) {
    predictions.push_back({
        {"group", p.group},
        {"profile", p.profile},
        {"offered_rps", p.offered_rps},
        {"phi_per_instance", p.estimate.per_instance_rps},
        {"bottleneck", BottleneckName(p.estimate.bottleneck)},
        {"t_p_s", p.estimate.t_p},
        {"t_d_s", p.estimate.t_d},
        {"prefill_rps", p.estimate.prefill_rps},
        {"decode_rps", p.estimate.decode_rps},
    });
  }
  out["analytic"] = predictions;

  const InvariantReport& inv = r.invariants;
  out["invariants"] = {
      {"violations", inv.violations},
      {"routed_after_removal", inv.routed_after_removal},
      {"isolation_breaches", inv.isolation_breaches},
      {"slot_mismatches", inv.slot_mismatches},
      {"local_queue_in_reject_mode", inv.local_queue_in_reject_mode},
      {"view_ahead_of_registry", inv.view_ahead_of_registry},
      {"cache_over_budget", inv.cache_over_budget},
      {"sse_unbalanced", inv.sse_unbalanced},
      {"idle_acceptance_breaches", inv.idle_acceptance_breaches},
      {"messages", inv.messages},
  };

  const TransferStats& t = r.transfers;
  const double n = static_cast<double>(std::max<std::uint64_t>(1, t.count));
  out["transfers"] = {
      {"count", t.count},
      {"mean_s", t.sum_seconds / n},
      {"mean_utilization", t.sum_utilization / n},
      {"conflicts", t.conflicts},
      {"mode", r.config.transfer_mode.name()},
  };

  Json histogram = Json::object();
  for (const auto& [attempts, count] : r.attempt_histogram) {
    histogram[std::to_string(attempts)] = count;
  }
  out["gateway"] = {
      {"policy", GatewayPolicyName(r.config.gateway.policy)},
      {"attempt_histogram", histogram},
      {"routing_errors", r.routing_errors},
      {"sse_opens", r.sse_opens},
      {"sse_closes", r.sse_closes},
  };
  out["prefill"] = {
      {"batches", r.prefill_batches},
      {"cache_hits", r.cache_hits},
      {"cache_lookups", r.cache_lookups},
  };

  Json faults = Json::array();
  for (const auto& f : r.faults) {
    faults.push_back({{"t", f.time},
                      {"instance", f.instance},
                      {"role", RoleName(f.role)},
                      {"group", f.group},
                      {"level", FaultLevelName(f.level)},
                      {"silent", f.silent}});
  }
  out["faults_injected"] = faults;

  Json recoveries = Json::array();
  for (const auto& rec : r.recoveries) {
    recoveries.push_back({{"instance", rec.fault.instance},
                          {"group", rec.group},
                          {"role", RoleName(rec.role)},
                          {"level", FaultLevelName(rec.fault.level)},
                          {"detected_at", rec.fault.detected_at},
                          {"action", rec.action},
                          {"containers_added", rec.containers_added},
                          {"substitute", rec.substitute},
                          {"alert", rec.alert},
                          {"completed", rec.completed},
                          {"steps", TranscriptJson(rec.steps)}});
  }
  Json workflows = Json::array();
  for (const auto& w : r.workflows) {
    workflows.push_back({{"kind", w.kind},
                         {"group", w.group},
                         {"started_at", w.started_at},
                         {"finished_at", w.finished_at},
                         {"finished", w.finished},
                         {"succeeded", w.succeeded},
                         {"entries", TranscriptJson(w.entries)}});
  }
  Json shortfall = Json::object();
  for (const auto& [group, count] : r.shortfall) shortfall[group] = count;
  out["control_plane"] = {
      {"containers_added", r.containers_added},
      {"shortfall", shortfall},
      {"recoveries", recoveries},
      {"workflows", workflows},
      {"snapshot", Json::parse(r.snapshot)},
  };

  Json completed = Json::array();
  for (const auto& b : r.metrics.buckets) completed.push_back(b.completed);
  out["completed_per_bucket"] = completed;
  out["bucket_s"] = r.metrics.bucket_width;
  out["events"] = r.events;
  return out.dump(2);
}

std::string SweepCsv(const std::vector<SweepPoint>& points) {
  std::ostringstream out;
  out << "axis,value,arrivals,done,success_rate,throughput_rps,"
         "phi_per_instance,mean_t_p_s,mean_t_d_s,mean_e2e_s,"
         "mean_transfer_s,violations\n";
  for (const auto& p : points) {
    const RunSummary& s = p.result.summary;
    const TransferStats& t = p.result.transfers;
    const double transfer =
        t.count > 0 ? t.sum_seconds / static_cast<double>(t.count) : 0.0;
    out << fmt::format(
        "{},{},{},{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{}\n", p.axis,
        p.value, s.arrivals, s.done,
        s.success_rate ? fmt::format("{:.6f}", *s.success_rate) : "",
        s.throughput_rps, s.phi_per_instance, s.mean_t_p, s.mean_t_d,
        s.mean_e2e, transfer, p.result.invariants.violations);
  }
  return out.str();
}

std::size_t SweepArgmax(const std::vector<SweepPoint>& points) {
  Require(!points.empty(), ErrorCode::kInvalidArgument, "empty sweep");
  std::size_t best = 0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (points[i].result.summary.phi_per_instance >
        points[best].result.summary.phi_per_instance) {
      best = i;
    }
  }
  return best;
}

std::string SweepDigest(const std::vector<SweepPoint>& points) {
  const SweepPoint& best = points[SweepArgmax(points)];
  std::string line =
      fmt::format("argmax {}={} phi_per_instance {:.6f}", best.axis, best.value,
                  best.result.summary.phi_per_instance);
  if (best.axis == "ratio") {
    const RunConfig& c = best.result.config;
    const GroupSpec& g = c.groups.front();
    const PerfProfile& profile =
        c.profiles.at(c.Scenario(g.scenarios.front()).profile);
    const ClusterShape opt = OptimalPdRatio(profile, g.batch_prefill, g.batch_decode,
                                            g.n_prefill + g.n_decode);
    line += fmt::format("; analytic optimum {}:{}", opt.n_prefill, opt.n_decode);
  }
  return line + "\n";
}

std::string DescribeReport(const std::string& report_json) {
  Json r;
  try {
    r = Json::parse(report_json);
  } catch (const nlohmann::json::exception& e) {
    Throw(ErrorCode::kConfig, fmt::format("report is not valid JSON: {}", e.what()));
  }
  if (!r.contains("summary") || !r.contains("invariants")) {
    Throw(ErrorCode::kConfig, "report lacks summary or invariants");
  }
  const Json& s = r["summary"];
  std::ostringstream out;
  out << fmt::format("experiment   {} (seed {}, {} s)\n",
                     r["experiment"].get<std::string>(),
                     r["seed"].get<std::uint64_t>(),
                     r["duration_s"].get<double>());
  out << fmt::format("requests     {} arrived, {} done, {} ttft timeouts, {} "
                     "e2e timeouts, {} failed, {} unfinished\n",
                     s["arrivals"].get<std::uint64_t>(),
                     s["done"].get<std::uint64_t>(),
                     s["timeout_ttft"].get<std::uint64_t>(),
                     s["timeout_e2e"].get<std::uint64_t>(),
                     s["failed"].get<std::uint64_t>(),
                     s["unfinished"].get<std::uint64_t>());
  out << fmt::format(
      "success      {}\n",
      s["success_rate"].is_null()
          ? std::string("n/a")
          : fmt::format("{:.4f}", s["success_rate"].get<double>()));
  out << fmt::format("throughput   {:.3f} rps, {:.4f} rps per instance over "
                     "{:.2f} instances\n",
                     s["throughput_rps"].get<double>(),
                     s["phi_per_instance"].get<double>(),
                     s["mean_instances"].get<double>());
  out << fmt::format("latency      T_p {:.4f} s, T_d {:.4f} s, e2e {:.4f} s\n",
                     s["mean_t_p_s"].get<double>(), s["mean_t_d_s"].get<double>(),
                     s["mean_e2e_s"].get<double>());
  auto ms = [](const Json& v) {
    return v.is_null() ? std::string("n/a")
                       : fmt::format("{:.1f} ms", v.get<double>() * 1e3);
  };
  if (r.contains("scenarios")) {
    for (const auto& [name, sc] : r["scenarios"].items()) {
      out << fmt::format(
          "scenario     {}: {} arrived, success {}, ttft p50 {} p90 {} p99 {}\n",
          name, sc["arrivals"].get<std::uint64_t>(),
          sc["success_rate"].is_null()
              ? std::string("n/a")
              : fmt::format("{:.4f}", sc["success_rate"].get<double>()),
          ms(sc["ttft_p50_s"]), ms(sc["ttft_p90_s"]), ms(sc["ttft_p99_s"]));
    }
  }
  if (r.contains("gateway") && r["gateway"].contains("attempt_histogram")) {
    std::string h;
    for (const auto& [k, v] : r["gateway"]["attempt_histogram"].items()) {
      h += fmt::format(" {}:{}", k, v.get<std::uint64_t>());
    }
    out << "attempts    " << (h.empty() ? std::string(" none") : h) << "\n";
  }
  if (r.contains("analytic")) {
    for (const auto& p : r["analytic"]) {
      out << fmt::format("analytic     group {}: {:.4f} rps per instance, {} "
                         "bound\n",
                         p["group"].get<std::string>(),
                         p["phi_per_instance"].get<double>(),
                         p["bottleneck"].get<std::string>());
    }
  }
  if (r.contains("control_plane")) {
    const Json& cp = r["control_plane"];
    out << fmt::format("recovery     {} transcripts, {} containers added\n",
                       cp["recoveries"].size(),
                       cp["containers_added"].get<int>());
  }
  out << fmt::format("invariants   {} violations\n",
                     r["invariants"]["violations"].get<std::uint64_t>());
  for (const auto& m : r["invariants"]["messages"]) {
    out << "  " << m.get<std::string>() << "\n";
  }
  return out.str();
}

}  // namespace pdsim
