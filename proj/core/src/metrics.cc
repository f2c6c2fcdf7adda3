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

#include "pdsim/metrics.h"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "pdsim/errors.h"

namespace pdsim {

std::string MetricsFrame::CsvHeader() {
  return "bucket_start_s,arrivals,completed,failed,rps,phi_per_instance,"
         "success_rate,mean_t_p_s,mean_t_d_s,mean_e2e_s,t_p_over_e2e,"
         "mean_transfer_s,d2d_utilization,cache_hit_rate,instances\n";
}

std::string MetricsFrame::ToCsv() const {
  std::string out = CsvHeader();
  for (const auto& b : buckets) {
    out += fmt::format(
        "{:.3f},{},{},{},{:.6f},{:.6f},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.9f},"
        "{:.6f},{:.6f},{:.3f}\n",
        b.start, b.arrivals, b.completed, b.failed, b.rps, b.phi_per_instance,
        b.success_rate ? fmt::format("{:.6f}", *b.success_rate) : "",
        b.mean_t_p, b.mean_t_d, b.mean_e2e, b.t_p_over_e2e, b.mean_transfer,
        b.d2d_utilization, b.cache_hit_rate, b.instances);
  }
  return out;
}

MetricsCollector::MetricsCollector(double bucket_width, double t_end)
    : width_(bucket_width), t_end_(t_end) {
  Require(bucket_width > 0.0, ErrorCode::kInvalidArgument,
          "bucket width must be positive");
  Require(t_end > 0.0, ErrorCode::kInvalidArgument,
          "metrics horizon must be positive");
  acc_.resize(static_cast<std::size_t>(std::ceil(t_end / bucket_width - 1e-9)));
  if (acc_.empty()) acc_.resize(1);
}

std::size_t MetricsCollector::Index(double t) const {
  if (t <= 0.0) return 0;
  const auto i = static_cast<std::size_t>(t / width_);
  return std::min(i, acc_.size() - 1);
}

void MetricsCollector::OnArrival(double t) { ++acc_[Index(t)].arrivals; }

void MetricsCollector::OnTerminal(const Request& r, double t) {
  Acc& a = acc_[Index(t)];
  if (r.status != RequestStatus::kDone) {
    ++a.failed;
    return;
  }
  ++a.completed;
  const double t_p = r.at(Phase::kPrefillEnd) - r.arrival;
  const double e2e = r.at(Phase::kDone) - r.arrival;
  a.sum_t_p += t_p;
  a.sum_t_d += e2e - t_p;
  a.sum_e2e += e2e;
}

void MetricsCollector::OnTransfer(double t, double seconds,
                                  double utilization) {
  Acc& a = acc_[Index(t)];
  ++a.transfers;
  a.sum_transfer += seconds;
  a.sum_utilization += utilization;
}

void MetricsCollector::OnPrefillBatch(double t, int hits, int misses) {
  Acc& a = acc_[Index(t)];
  a.hits += static_cast<std::uint64_t>(hits);
  a.lookups += static_cast<std::uint64_t>(hits + misses);
}

void MetricsCollector::OnInstanceCount(double t, int count) {
  instance_steps_.emplace_back(t, count);
}

MetricsFrame MetricsCollector::Finish() const {
  MetricsFrame frame;
  frame.bucket_width = width_;
  std::size_t step = 0;
  int current = 0;
  for (std::size_t i = 0; i < acc_.size(); ++i) {
    const Acc& a = acc_[i];
    MetricsBucket b;
    b.start = static_cast<double>(i) * width_;
    const double end = std::min(b.start + width_, t_end_);
    const double span = end - b.start;
    // Time-weighted instance count across the bucket.
    double weighted = 0.0;
    double cursor = b.start;
    while (step < instance_steps_.size() &&
           instance_steps_[step].first <= end) {
      const double at = std::max(instance_steps_[step].first, b.start);
      weighted += current * (at - cursor);
      cursor = at;
      current = instance_steps_[step].second;
      ++step;
    }
    weighted += current * (end - cursor);
    b.instances = span > 0.0 ? weighted / span : current;
    b.arrivals = a.arrivals;
    b.completed = a.completed;
    b.failed = a.failed;
    b.rps = span > 0.0 ? static_cast<double>(a.completed) / span : 0.0;
    b.phi_per_instance = b.instances > 0.0 ? b.rps / b.instances : 0.0;
    if (a.completed + a.failed > 0) {
      b.success_rate = static_cast<double>(a.completed) /
                       static_cast<double>(a.completed + a.failed);
    }
    if (a.completed > 0) {
      const double n = static_cast<double>(a.completed);
      b.mean_t_p = a.sum_t_p / n;
      b.mean_t_d = a.sum_t_d / n;
      b.mean_e2e = a.sum_e2e / n;
      b.t_p_over_e2e = a.sum_e2e > 0.0 ? a.sum_t_p / a.sum_e2e : 0.0;
    }
    if (a.transfers > 0) {
      b.mean_transfer = a.sum_transfer / static_cast<double>(a.transfers);
      b.d2d_utilization = a.sum_utilization / static_cast<double>(a.transfers);
    }
    if (a.lookups > 0) {
      b.cache_hit_rate =
          static_cast<double>(a.hits) / static_cast<double>(a.lookups);
    }
    frame.buckets.push_back(b);
  }
  return frame;
}

RunSummary SummarizeRequests(std::span<const Request> requests, double start,
                             double end, double mean_instances) {
  Require(end > start, ErrorCode::kInvalidArgument,
          "summary window must be non-empty");
  RunSummary s;
  s.window_start = start;
  s.window_end = end;
  s.mean_instances = mean_instances;
  std::uint64_t in_window = 0;
  double sum_t_p = 0.0;
  double sum_e2e = 0.0;
  for (const Request& r : requests) {
    if (r.arrival >= start && r.arrival < end) {
      ++s.arrivals;
      switch (r.status) {
        case RequestStatus::kDone:
          ++s.done;
          break;
        case RequestStatus::kTimeoutTtft:
          ++s.timeout_ttft;
          break;
        case RequestStatus::kTimeoutE2e:
          ++s.timeout_e2e;
          break;
        case RequestStatus::kFailed:
          ++s.failed;
          break;
        default:
          ++s.unfinished;
          break;
      }
    }
    if (r.status == RequestStatus::kDone) {
      const double t = r.at(Phase::kDone);
      if (t >= start && t < end) {
        ++in_window;
        sum_t_p += r.at(Phase::kPrefillEnd) - r.arrival;
        sum_e2e += t - r.arrival;
      }
    }
  }
  if (s.arrivals > 0) {
    s.success_rate =
        static_cast<double>(s.done) / static_cast<double>(s.arrivals);
  }
  s.throughput_rps = static_cast<double>(in_window) / (end - start);
  s.phi_per_instance =
      mean_instances > 0.0 ? s.throughput_rps / mean_instances : 0.0;
  if (in_window > 0) {
    const double n = static_cast<double>(in_window);
    s.mean_t_p = sum_t_p / n;
    s.mean_e2e = sum_e2e / n;
    s.mean_t_d = s.mean_e2e - s.mean_t_p;
    s.tp_over_e2e = sum_e2e > 0.0 ? sum_t_p / sum_e2e : 0.0;
  }
  return s;
}

double NearestRank(std::span<const double> sorted, double q) {
  Require(!sorted.empty(), ErrorCode::kInvalidArgument,
          "quantile of an empty sample");
  Require(q > 0.0 && q <= 1.0, ErrorCode::kInvalidArgument,
          "quantile must be in (0, 1]");
  const auto rank = static_cast<std::size_t>(
      std::ceil(q * static_cast<double>(sorted.size())));
  return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

std::map<std::string, ScenarioSummary> SummarizeScenarios(
    std::span<const Request> requests, double start, double end) {
  std::map<std::string, ScenarioSummary> out;
  std::map<std::string, std::vector<double>> ttft;
  for (const Request& r : requests) {
    if (r.arrival < start || r.arrival >= end) continue;
    ScenarioSummary& s = out[r.scenario];
    ++s.arrivals;
    if (r.status == RequestStatus::kDone) {
      ++s.done;
      ttft[r.scenario].push_back(r.at(Phase::kPrefillEnd) - r.arrival);
    }
  }
  for (auto& [name, s] : out) {
    s.success_rate =
        static_cast<double>(s.done) / static_cast<double>(s.arrivals);
    auto& v = ttft[name];
    if (v.empty()) continue;
    std::sort(v.begin(), v.end());
    s.ttft_p50 = NearestRank(v, 0.50);
    s.ttft_p90 = NearestRank(v, 0.90);
    s.ttft_p99 = NearestRank(v, 0.99);
    s.ttft_max = v.back();
  }
  return out;
}

}  // namespace pdsim
