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

// pdsim: command-line front end for the disaggregated serving simulator.
//
//   pdsim validate CONFIG
//   pdsim run CONFIG [--seed N] [--duration S] [--trace FILE] [--out DIR]
//   pdsim sweep CONFIG [--seed N] [--duration S] [--threads N] [--out DIR]
//   pdsim report REPORT_JSON
//
// Exit status: 0 on success, 1 when a run reports invariant violations,
// 2 on bad input.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "pdsim/config.h"
#include "pdsim/errors.h"
#include "pdsim/experiment.h"
#include "pdsim/workload.h"

namespace {

constexpr int kExitViolation = 1;
constexpr int kExitBadInput = 2;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> duration;
};

pdsim::RunConfig Load(const std::string& path, const Overrides& o) {
  pdsim::RunConfig config = pdsim::LoadConfig(path);
  if (o.seed) config.seed = *o.seed;
  if (o.duration) {
    // A traffic end that tracked the old duration keeps tracking it.
    if (config.traffic.end == config.duration) config.traffic.end = *o.duration;
    config.duration = *o.duration;
    config.warmup = std::min(config.warmup, config.duration);
  }
  config.Validate();
  return config;
}

void WriteFile(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) {
    pdsim::Throw(pdsim::ErrorCode::kConfig,
                 fmt::format("cannot write {}", path.string()));
  }
  out << text;
}

std::string ReadFile(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    pdsim::Throw(pdsim::ErrorCode::kConfig, fmt::format("cannot read {}", path));
  }
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int Validate(const std::string& path) {
  const pdsim::RunConfig config = pdsim::LoadConfig(path);
  config.Validate();
  std::cout << fmt::format("{}: ok ({} experiment, {} groups, {} scenarios)\n",
                           path, config.experiment, config.groups.size(),
                           config.scenarios.size());
  return 0;
}

int Run(const std::string& path, const Overrides& o, const std::string& trace,
        const std::string& out_dir) {
  const pdsim::RunConfig config = Load(path, o);
  pdsim::ExperimentResult result;
  if (trace.empty()) {
    result = pdsim::RunExperiment(config);
  } else {
    std::ifstream in(trace);
    if (!in) {
      pdsim::Throw(pdsim::ErrorCode::kConfig, fmt::format("cannot read {}", trace));
    }
    result = pdsim::RunExperiment(config, pdsim::ReadTraceJsonl(in));
  }
  const std::string report = pdsim::ReportJson(result);
  if (!out_dir.empty()) {
    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    WriteFile(dir / "report.json", report);
    WriteFile(dir / "metrics.csv", result.metrics.ToCsv());
    std::ofstream requests(dir / "requests.jsonl");
    pdsim::WriteTraceJsonl(requests, result.requests);
  }
  std::cout << pdsim::DescribeReport(report);
  return result.ok() ? 0 : kExitViolation;
}

int Sweep(const std::string& path, const Overrides& o, int threads,
          const std::string& out_dir) {
  const pdsim::RunConfig config = Load(path, o);
  const auto points = pdsim::RunSweep(config, threads);
  const std::string csv = pdsim::SweepCsv(points);
  bool ok = true;
  for (const auto& p : points) ok = ok && p.result.ok();
  if (!out_dir.empty()) {
    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    WriteFile(dir / "sweep.csv", csv);
    for (std::size_t i = 0; i < points.size(); ++i) {
      WriteFile(dir / fmt::format("point_{:03d}.json", i),
                pdsim::ReportJson(points[i].result));
    }
  }
  std::cout << csv << pdsim::SweepDigest(points);
  return ok ? 0 : kExitViolation;
}

int Report(const std::string& path) {
  const std::string text = ReadFile(path);
  std::cout << pdsim::DescribeReport(text);
  const auto json = nlohmann::json::parse(text);
  return json["invariants"]["violations"].get<std::uint64_t>() == 0
             ? 0
             : kExitViolation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulator for prefill/decode disaggregated LLM serving"};
  app.require_subcommand(1);

  Overrides overrides;
  std::string config_path;
  std::string trace_path;
  std::string out_dir;
  std::string report_path;
  int threads =
      static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  auto* validate = app.add_subcommand("validate", "Check a config file");
  validate->add_option("config", config_path, "Config JSON")->required();

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("config", config_path, "Config JSON")->required();
    cmd->add_option("--seed", overrides.seed, "Override the config seed");
    cmd->add_option("--duration", overrides.duration,
                    "Override the simulated duration in seconds")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--out", out_dir, "Directory for report files");
  };
  auto* run = app.add_subcommand("run", "Run one experiment");
  add_common(run);
  run->add_option("--trace", trace_path,
                  "Replay a request trace (JSONL) instead of generating one");
  auto* sweep = app.add_subcommand("sweep", "Run the config's sweep");
  add_common(sweep);
  sweep->add_option("--threads", threads, "Worker threads")
      ->check(CLI::PositiveNumber);
  auto* report = app.add_subcommand("report", "Summarise a run report");
  report->add_option("report", report_path, "report.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitBadInput;
  }

  try {
    if (*validate) return Validate(config_path);
    if (*run) return Run(config_path, overrides, trace_path, out_dir);
    if (*sweep) return Sweep(config_path, overrides, threads, out_dir);
    if (*report) return Report(report_path);
  } catch (const pdsim::Error& e) {
    std::cerr << "pdsim: " << e.what() << "\n";
    return kExitBadInput;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "pdsim: " << e.what() << "\n";
    return kExitBadInput;
  }
  return kExitBadInput;
}
