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

// Acceptance checks AC1..AC7. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails.

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/distributions/fisher_f.hpp>

#include "pdsim/config.h"
#include "pdsim/experiment.h"
#include "pdsim/perf_model.h"
#include "pdsim/transfer.h"

namespace pdsim {
namespace {

std::string ConfigPath(const std::string& name) {
  return std::string(PDSIM_CONFIG_DIR) + "/" + name + ".json";
}

int Threads() {
  return static_cast<int>(std::max(2u, std::thread::hardware_concurrency()));
}

struct Verdict {
  bool pass = true;
  std::string detail;
};

std::uint64_t KvBytes(int prompt) { return ModelShape().KvBytes(prompt); }

double BlockFreeXi(int prompt) {
  return RequestTransferTime(KvBytes(prompt), ModelShape().devices_per_instance,
                             TransferMode::BlockFree(), LinkModel(), 1, nullptr)
      .xi;
}

// Linear latency tables over 1..max_batch.
PerfProfile RandomProfile(std::mt19937_64& rng, int b_p, int b_d, int prompt,
                          int generated) {
  std::uniform_real_distribution<double> ttft1(0.15, 0.5);
  std::uniform_real_distribution<double> ttft_growth(0.5, 0.9);
  std::uniform_real_distribution<double> tpot1(0.02, 0.05);
  std::uniform_real_distribution<double> tpot_growth(0.005, 0.03);
  PerfProfile p;
  const double t1 = ttft1(rng);
  const double tb = t1 * (1.0 + ttft_growth(rng) * (b_p - 1));
  p.ttft_by_batch = b_p == 1 ? LatencyTable({{1, t1}}) : LatencyTable({{1, t1}, {b_p, tb}});
  const double d1 = tpot1(rng);
  p.tpot_by_batch = LatencyTable({{1, d1}, {b_d, d1 + tpot_growth(rng) * (b_d - 1) * d1}});
  p.mean_generated_tokens = generated;
  p.transfer_time = BlockFreeXi(prompt);
  return p;
}

// Single isolated group, constant prompt/output, traffic well above both
// capabilities.
RunConfig Saturated(const PerfProfile& profile, ClusterShape shape, int prompt,
                    double rate, std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  c.duration = 240.0;
  c.warmup = 80.0;
  c.drain = 0.0;
  c.health_monitoring = false;
  c.profiles["p"] = profile;
  ScenarioSpec s;
  s.id = "s";
  s.profile = "p";
  s.prompt_len = DiscreteDistribution::Constant(prompt);
  s.output_len = DiscreteDistribution::Constant(
      static_cast<int>(profile.mean_generated_tokens));
  s.ttft_slo = 1e6;
  s.e2e_timeout = 2e6;
  c.scenarios = {s};
  c.traffic.slots = {{0.0, {{"s", rate}}}};
  c.traffic.end = c.duration;
  GroupSpec g;
  g.name = "g";
  g.scenarios = {"s"};
  g.n_prefill = shape.n_prefill;
  g.n_decode = shape.n_decode;
  g.batch_prefill = shape.batch_prefill;
  g.batch_decode = shape.batch_decode;
  c.groups = {g};
  c.gateway.inter_offer_delay = 0.001;
  return c;
}

double Capability(const PerfProfile& p, const ClusterShape& s) {
  const ThroughputEstimate e = ClusterThroughput(p, s, 1e12);
  return std::max(e.prefill_rps, e.decode_rps);
}

Verdict Ac1() {
  Verdict v;
  std::mt19937_64 rng(20240611);
  const int kProfiles = 6;
  const int n = 8;
  int matched = 0;
  std::string worst;
  for (int i = 0; i < kProfiles; ++i) {
    const int b_p = std::vector<int>{1, 2, 4}[rng() % 3];
    const int b_d = std::vector<int>{8, 16, 32}[rng() % 3];
    const int prompt = std::vector<int>{512, 1024, 2048}[rng() % 3];
    const int generated = 32 + static_cast<int>(rng() % 97);
    const PerfProfile profile = RandomProfile(rng, b_p, b_d, prompt, generated);
    double rate = 0.0;
    for (int np = 1; np < n; ++np) {
      rate = std::max(rate, Capability(profile, {np, n - np, b_p, b_d}));
    }
    RunConfig base = Saturated(profile, {1, n - 1, b_p, b_d}, prompt, 1.3 * rate, 100 + i);
    base.sweep.axis = "ratio";
    for (int np = 1; np < n; ++np) base.sweep.values.push_back(fmt::format("{}:{}", np, n - np));
    const auto points = RunSweep(base, Threads());
    int best = 0;
    for (int k = 1; k < static_cast<int>(points.size()); ++k) {
      if (points[k].result.summary.phi_per_instance >
          points[best].result.summary.phi_per_instance) {
        best = k;
      }
    }
    const int sim_np = points[best].result.config.groups[0].n_prefill;
    const int model_np = OptimalPdRatio(profile, b_p, b_d, n).n_prefill;
    if (std::abs(sim_np - model_np) <= 1) {
      ++matched;
    } else {
      worst += fmt::format(" profile{}: sim {}P model {}P;", i, sim_np, model_np);
    }
  }
  const bool random_ok = matched == kProfiles;

  const RunConfig reference = LoadConfig(ConfigPath("reference"));
  const auto points = RunSweep(reference, Threads());
  double best = 0.0;
  double low = 1e300;
  std::string best_ratio;
  for (const auto& p : points) {
    const double phi = p.result.summary.phi_per_instance;
    if (phi > best) {
      best = phi;
      best_ratio = p.value;
    }
    low = std::min(low, phi);
  }
  const auto& g = reference.groups[0];
  const ClusterShape opt = OptimalPdRatio(reference.profiles.at("chat"), g.batch_prefill,
                                          g.batch_decode, g.n_prefill + g.n_decode);
  const std::string opt_ratio = fmt::format("{}:{}", opt.n_prefill, opt.n_decode);
  const double gap = low > 0 ? best / low - 1.0 : INFINITY;
  v.pass = random_ok && gap >= 0.5 && best_ratio == opt_ratio;
  v.detail = fmt::format(
      "random profiles matched {}/{} within +-1{}; reference argmax {} (model {}), "
      "optimal-vs-worst gap {:.0f}%",
      matched, kProfiles, worst, best_ratio, opt_ratio, gap * 100);
  return v;
}

Verdict Ac2() {
  Verdict v;
  const RunConfig hol = LoadConfig(ConfigPath("head_of_line"));
  RunConfig baseline = ApplySweepValue(hol, "policy", "baseline");
  baseline.sweep = hol.sweep;
  RunConfig on_demand = ApplySweepValue(hol, "policy", "on_demand");
  on_demand.sweep = hol.sweep;
  const auto base_points = RunSweep(baseline, Threads());
  const auto od_points = RunSweep(on_demand, Threads());
  bool dominance = true;
  double base4 = -1;
  double od4 = -1;
  std::string series;
  for (std::size_t i = 0; i < base_points.size(); ++i) {
    const double b = base_points[i].result.summary.success_rate.value_or(0.0);
    const double o = od_points[i].result.summary.success_rate.value_or(0.0);
    dominance = dominance && o >= b;
    if (std::stod(base_points[i].value) == 4.0) {
      base4 = b;
      od4 = o;
    }
    series += fmt::format(" {}x {:.3f}/{:.3f}", base_points[i].value, o, b);
  }
  v.pass = base4 >= 0 && base4 <= 0.80 && od4 >= 0.99 && dominance;
  v.detail = fmt::format(
      "at 4x on-demand {:.1f}% baseline {:.1f}%; on-demand/baseline:{}", od4 * 100,
      base4 * 100, series);
  return v;
}

Verdict Ac3() {
  Verdict v;
  // Identity over random sizes and block sizes.
  std::mt19937_64 rng(3);
  const LinkModel link;
  int identity_failures = 0;
  for (int i = 0; i < 100000; ++i) {
    const std::uint64_t size = 1 + rng() % 1'000'000'000;
    const std::uint64_t block = 1 + rng() % 8'000'000;
    const int concurrent = 1 + static_cast<int>(rng() % 8);
    const auto fixed = TransferTime(size, TransferMode::BlockFixed(block), link, concurrent, nullptr);
    const auto free = TransferTime(size, TransferMode::BlockFree(), link, concurrent, nullptr);
    const std::uint64_t n = (size + block - 1) / block;
    const bool exact = fixed.messages - free.messages == n - 1 &&
                       fixed.wire_seconds == free.wire_seconds &&
                       std::abs((fixed.seconds - free.seconds) -
                                static_cast<double>(n - 1) * link.control_overhead) <=
                           1e-12 * std::max(1.0, fixed.seconds);
    identity_failures += exact ? 0 : 1;
  }

  const RunConfig transfer = LoadConfig(ConfigPath("transfer"));
  const auto fixed = RunExperiment(ApplySweepValue(transfer, "transfer_mode", "block_fixed"));
  const auto free = RunExperiment(ApplySweepValue(transfer, "transfer_mode", "block_free"));
  const double mean_fixed = fixed.transfers.sum_seconds / fixed.transfers.count;
  const double mean_free = free.transfers.sum_seconds / free.transfers.count;
  const double reduction = 1.0 - mean_free / mean_fixed;

  RunConfig noisy = ApplySweepValue(transfer, "transfer_mode", "block_free");
  RunConfig quiet = noisy;
  noisy.link.hop_conflict_prob = 0.05;
  quiet.link.hop_conflict_prob = 0.0;
  const auto noisy_run = RunExperiment(noisy);
  const auto quiet_run = RunExperiment(quiet);
  auto variance = [](const TransferStats& t) {
    const double n = static_cast<double>(t.count);
    const double mean = t.sum_seconds / n;
    return (t.sum_sq_seconds - n * mean * mean) / (n - 1);
  };
  const double f = variance(noisy_run.transfers) / variance(quiet_run.transfers);
  const boost::math::fisher_f dist(static_cast<double>(noisy_run.transfers.count - 1),
                                   static_cast<double>(quiet_run.transfers.count - 1));
  const double p = boost::math::cdf(boost::math::complement(dist, f));
  const bool enough = noisy_run.transfers.count >= 10000 && quiet_run.transfers.count >= 10000;

  v.pass = identity_failures == 0 && reduction >= 0.40 && reduction <= 0.52 && enough &&
           f > 1.0 && p < 0.01;
  v.detail = fmt::format(
      "identity failures {}/100000; mean transfer {:.3f} ms fixed vs {:.3f} ms free, "
      "reduction {:.1f}%; conflict variance F={:.3g} over {}/{} samples, p={:.3g}",
      identity_failures, mean_fixed * 1e3, mean_free * 1e3, reduction * 100, f,
      noisy_run.transfers.count, quiet_run.transfers.count, p);
  return v;
}

Verdict Ac4() {
  Verdict v;
  std::mt19937_64 rng(4);
  int failures = 0;
  int partial = 0;
  for (int i = 0; i < 10000; ++i) {
    const ContiguousLayout layout =
        LayoutBuffer(1 + rng() % 32, 1 + rng() % 48, 1 + rng() % 8, 1 + rng() % 4);
    std::vector<std::byte> tensor(layout.total);
    for (auto& b : tensor) b = static_cast<std::byte>(rng() & 0xff);
    const auto packed = Pack(std::span<const std::byte>(tensor), layout);
    const std::uint64_t block = 1 + rng() % 512;
    const std::size_t need = (layout.total + block - 1) / block;
    partial += layout.total % block != 0;
    BlockPool pool(block, need + 8);
    auto ids = pool.Allocate(need + 8);
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(need);
    BlockTable table{block, ids, 0};
    RecvScatter(packed, table, pool);
    failures += GatherBlocks(table, pool) != tensor;
  }
  const double per_token = static_cast<double>(LayoutBuffer(1, 12288, 96, 2).total);
  const double per_1k = static_cast<double>(LayoutBuffer(1024, 12288, 96, 2).total);
  const double mb = per_token / (1 << 20);
  const double gb = per_1k / (1ull << 30);
  v.pass = failures == 0 && partial > 0 && std::abs(mb / 4.5 - 1) <= 0.05 &&
           std::abs(gb / 4.5 - 1) <= 0.05;
  v.detail = fmt::format(
      "round-trip failures {}/10000 ({} partial-block cases); {:.3f} MiB/token, "
      "{:.3f} GiB per 1k tokens",
      failures, partial, mb, gb);
  return v;
}

Verdict Ac5() {
  Verdict v;
  std::mt19937_64 rng(55);
  const int kProfiles = 10;
  std::vector<RunConfig> configs;
  std::vector<double> predicted;
  for (int i = 0; i < kProfiles; ++i) {
    const int b_p = std::vector<int>{1, 2, 4}[rng() % 3];
    const int b_d = std::vector<int>{8, 16, 32}[rng() % 3];
    const int prompt = std::vector<int>{512, 1024, 2048}[rng() % 3];
    const int generated = 32 + static_cast<int>(rng() % 97);
    const PerfProfile profile = RandomProfile(rng, b_p, b_d, prompt, generated);
    const ClusterShape shape{1 + static_cast<int>(rng() % 4), 1 + static_cast<int>(rng() % 4),
                             b_p, b_d};
    const double rate = 1.5 * Capability(profile, shape);
    configs.push_back(Saturated(profile, shape, prompt, rate, 500 + i));
    predicted.push_back(ClusterThroughput(profile, shape, rate).per_instance_rps);
  }
  std::vector<ExperimentResult> results(configs.size());
  {
    std::vector<std::thread> workers;
    for (std::size_t i = 0; i < configs.size(); ++i) {
      workers.emplace_back([&, i] { results[i] = RunExperiment(configs[i]); });
    }
    for (auto& w : workers) w.join();
  }
  double worst = 0.0;
  std::string series;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const double sim = results[i].summary.phi_per_instance;
    const double err = std::abs(sim / predicted[i] - 1.0);
    worst = std::max(worst, err);
    series += fmt::format(" {:.3f}/{:.3f}", sim, predicted[i]);
  }
  v.pass = worst <= 0.05;
  v.detail = fmt::format("worst relative error {:.2f}% over {} profiles; sim/model:{}",
                         worst * 100, kProfiles, series);
  return v;
}

Verdict Ac6() {
  Verdict v;
  const RunConfig drill_config = LoadConfig(ConfigPath("fault_drill"));
  const auto drill = RunExperiment(drill_config);
  int substitutes = 0;
  for (const auto& r : drill.recoveries) substitutes += r.containers_added;

  const RunConfig upgrade_config = LoadConfig(ConfigPath("rolling_upgrade"));
  const auto upgrade = RunExperiment(upgrade_config);
  double upgrade_end = -1;
  int upgraded = 0;
  bool all_done = true;
  for (const auto& w : upgrade.workflows) {
    if (w.kind == "upgrade" || w.kind == "setup") {
      upgrade_end = std::max(upgrade_end, w.finished_at);
      all_done = all_done && w.finished && w.succeeded;
    }
    upgraded += w.kind == "upgrade";
  }
  std::uint64_t min_completed = UINT64_MAX;
  const double width = upgrade.metrics.bucket_width;
  for (const auto& b : upgrade.metrics.buckets) {
    if (b.start + width <= upgrade_config.upgrade.start || b.start >= upgrade_end) continue;
    min_completed = std::min(min_completed, b.completed);
  }
  const bool groups_ok = upgrade_config.groups.size() >= 2 &&
                         upgraded == static_cast<int>(upgrade_config.groups.size());
  v.pass = static_cast<int>(drill.faults.size()) == drill_config.faults.count &&
           drill_config.faults.count == 100 && drill.containers_added == 100 &&
           substitutes == 100 && drill.invariants.routed_after_removal == 0 &&
           drill.ok() && upgrade.invariants.routed_after_removal == 0 && upgrade.ok() &&
           groups_ok && all_done && upgrade_end > 0 && min_completed > 0 &&
           min_completed != UINT64_MAX;
  v.detail = fmt::format(
      "drill: {} faults, {} containers added, {} routed after removal, {} violations; "
      "upgrade of {} groups over [{:.0f}s, {:.0f}s]: min completions per {:.0f}s bucket {}, "
      "{} routed after removal",
      drill.faults.size(), drill.containers_added, drill.invariants.routed_after_removal,
      drill.invariants.violations, upgraded, upgrade_config.upgrade.start, upgrade_end, width,
      min_completed == UINT64_MAX ? 0 : min_completed, upgrade.invariants.routed_after_removal);
  return v;
}

Verdict Ac7() {
  Verdict v;
  int identical = 0;
  int total = 0;
  for (const char* name : {"reference", "head_of_line", "fault_drill", "transfer"}) {
    const RunConfig c = LoadConfig(ConfigPath(name));
    const auto a = RunExperiment(c);
    const auto b = RunExperiment(c);
    ++total;
    identical += a.metrics.ToCsv() == b.metrics.ToCsv() && ReportJson(a) == ReportJson(b);
  }
  // Parallel sweeps must not depend on the worker count.
  const RunConfig transfer = LoadConfig(ConfigPath("transfer"));
  ++total;
  identical += SweepCsv(RunSweep(transfer, 1)) == SweepCsv(RunSweep(transfer, Threads()));
  v.pass = identical == total;
  v.detail = fmt::format("{}/{} repeated runs byte-identical (metrics CSV and report)",
                         identical, total);
  return v;
}

}  // namespace
}  // namespace pdsim

int main() {
  using Check = std::pair<const char*, std::function<pdsim::Verdict()>>;
  const std::vector<Check> checks = {
      {"AC1", pdsim::Ac1}, {"AC2", pdsim::Ac2}, {"AC3", pdsim::Ac3}, {"AC4", pdsim::Ac4},
      {"AC5", pdsim::Ac5}, {"AC6", pdsim::Ac6}, {"AC7", pdsim::Ac7},
  };
  int failed = 0;
  for (const auto& [name, check] : checks) {
    const auto start = std::chrono::steady_clock::now();
    pdsim::Verdict verdict;
    try {
      verdict = check();
    } catch (const std::exception& e) {
      verdict = {false, std::string("exception: ") + e.what()};
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += verdict.pass ? 0 : 1;
    fmt::print("{}: {} {} [{:.1f}s]\n", name, verdict.pass ? "PASS" : "FAIL", verdict.detail,
               seconds);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
