#pragma once

// Time series, CSV export and the controller comparison summary.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "cwndlab/simnet.hpp"

namespace cwndlab {

class NonMonotonicTimestamp : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IoFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest decimal text that reads back to the same double.
inline std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  if (res.ec != std::errc{}) throw std::runtime_error("format_real failed");
  return std::string(buf, res.ptr);
}

inline double parse_real(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw std::invalid_argument("not a number: '" + std::string(s) + "'");
  return v;
}

struct SeriesMean {
  double value = 0.0;
  bool empty = true;
};

class TraceSeries {
 public:
  using Sample = std::pair<SimTime, double>;

  TraceSeries() = default;
  explicit TraceSeries(std::string name) : name_(std::move(name)) {}

  /// Appends a sample; timestamps must be strictly increasing.
  void record(SimTime t, double v) {
    if (!samples_.empty() && !(t > samples_.back().first)) {
      throw NonMonotonicTimestamp("series '" + name_ + "': sample at " + std::to_string(t.ticks) +
                                  "us not after " + std::to_string(samples_.back().first.ticks) +
                                  "us");
    }
    samples_.emplace_back(t, v);
  }

  const std::string& name() const { return name_; }
  const std::vector<Sample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }

  SeriesMean mean() const {
    if (samples_.empty()) return {};
    double s = 0.0;
    for (const auto& [t, v] : samples_) s += v;
    return {s / static_cast<double>(samples_.size()), false};
  }

  double sum() const {
    double s = 0.0;
    for (const auto& [t, v] : samples_) s += v;
    return s;
  }

  /// Last value at or before t (0 before the first sample).
  double value_at(SimTime t) const {
    auto it = std::upper_bound(samples_.begin(), samples_.end(), t,
                               [](SimTime x, const Sample& s) { return x < s.first; });
    if (it == samples_.begin()) return 0.0;
    return std::prev(it)->second;
  }

 private:
  std::string name_;
  std::vector<Sample> samples_;
};

/// Mean of a sampled series where sample k stands for the interval
/// (t_{k-1}, t_k], t_{-1} = origin.  Samples equal to zero are skipped when
/// `skip_zero` is set (used for RTT before the first measurement).
inline SeriesMean time_weighted_mean(const TraceSeries& s, SimTime origin, bool skip_zero) {
  double num = 0.0;
  double den = 0.0;
  SimTime prev = origin;
  for (const auto& [t, v] : s.samples()) {
    const double w = static_cast<double>((t - prev).ticks);
    prev = t;
    if (skip_zero && v == 0.0) continue;
    num += w * v;
    den += w;
  }
  if (den == 0.0) return {};
  return {num / den, false};
}

/// Converts a cumulative delivered-bytes counter into per-window payload
/// throughput in Mbps.  Windows end at k*window (the last one at `end`) and
/// each sample is timestamped with its window end.
inline TraceSeries throughput_over(const TraceSeries& delivered_bytes, SimTime window, SimTime end,
                                   std::string name = "throughput_mbps") {
  if (window.ticks == 0) throw std::invalid_argument("window must be > 0");
  TraceSeries out(std::move(name));
  SimTime lo{};
  double prev = 0.0;
  while (lo < end) {
    const SimTime hi = std::min(lo + window, end);
    const double cur = delivered_bytes.value_at(hi);
    const double bytes = cur - prev;
    out.record(hi, bytes * 8.0 / (hi - lo).as_seconds() / 1e6);
    prev = cur;
    lo = hi;
  }
  return out;
}

inline TraceSeries throughput_over(const TraceSeries& delivered_bytes, SimTime window) {
  const SimTime end = delivered_bytes.empty() ? window : delivered_bytes.samples().back().first;
  return throughput_over(delivered_bytes, window, end);
}

/// Bytes represented by a throughput series (inverse of throughput_over,
/// rounded to whole bytes per window).
inline std::uint64_t bytes_from_throughput(const TraceSeries& mbps, SimTime origin = {}) {
  std::uint64_t total = 0;
  SimTime prev = origin;
  for (const auto& [t, v] : mbps.samples()) {
    total += static_cast<std::uint64_t>(std::llround(v * 1e6 * (t - prev).as_seconds() / 8.0));
    prev = t;
  }
  return total;
}

/// Per-run figures that feed a comparison.
struct RunSummary {
  std::string controller;
  std::uint64_t seed = 0;
  DumbbellConfig net;
  double mean_latency_ms = 0.0;
  double mean_throughput_mbps = 0.0;
  std::uint64_t drops = 0;
  std::uint64_t delivered_bytes = 0;
};

struct ComparisonSummary {
  double rl_latency_ms = 0.0;
  double newreno_latency_ms = 0.0;
  double rl_throughput_mbps = 0.0;
  double newreno_throughput_mbps = 0.0;
  double latency_improvement_pct = 0.0;
  double throughput_improvement_pct = 0.0;
  double rl_drops = 0.0;
  double newreno_drops = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<RunSummary> rl_runs;
  std::vector<RunSummary> newreno_runs;
};

/// Means across runs and the relative improvement of the first argument
/// over the second (positive = lower latency / higher throughput).
inline ComparisonSummary summarize(const std::vector<RunSummary>& rl_runs,
                                   const std::vector<RunSummary>& newreno_runs) {
  if (rl_runs.empty() || newreno_runs.empty())
    throw std::invalid_argument("summarize needs at least one run per controller");
  const auto& ref = rl_runs.front().net;
  for (const auto* runs : {&rl_runs, &newreno_runs})
    for (const auto& r : *runs)
      if (!r.net.same_topology(ref)) throw ConfigMismatch("runs use different topology configs");

  auto mean = [](const std::vector<RunSummary>& rs, auto field) {
    double s = 0.0;
    for (const auto& r : rs) s += static_cast<double>(r.*field);
    return s / static_cast<double>(rs.size());
  };
  ComparisonSummary c;
  c.rl_latency_ms = mean(rl_runs, &RunSummary::mean_latency_ms);
  c.newreno_latency_ms = mean(newreno_runs, &RunSummary::mean_latency_ms);
  c.rl_throughput_mbps = mean(rl_runs, &RunSummary::mean_throughput_mbps);
  c.newreno_throughput_mbps = mean(newreno_runs, &RunSummary::mean_throughput_mbps);
  c.rl_drops = mean(rl_runs, &RunSummary::drops);
  c.newreno_drops = mean(newreno_runs, &RunSummary::drops);
  c.latency_improvement_pct =
      c.newreno_latency_ms != 0.0
          ? 100.0 * (c.newreno_latency_ms - c.rl_latency_ms) / c.newreno_latency_ms
          : 0.0;
  c.throughput_improvement_pct =
      c.newreno_throughput_mbps != 0.0
          ? 100.0 * (c.rl_throughput_mbps - c.newreno_throughput_mbps) / c.newreno_throughput_mbps
          : 0.0;
  for (const auto& r : rl_runs) c.seeds.push_back(r.seed);
  c.rl_runs = rl_runs;
  c.newreno_runs = newreno_runs;
  return c;
}

/// Writes `time_us,<name>...` rows over the union of timestamps; missing
/// samples are empty cells.
inline void export_csv(const std::vector<const TraceSeries*>& series,
                       const std::filesystem::path& path) {
  std::map<std::uint64_t, std::vector<std::optional<double>>> rows;
  for (std::size_t i = 0; i < series.size(); ++i) {
    for (const auto& [t, v] : series[i]->samples()) {
      auto& row = rows[t.ticks];
      row.resize(series.size());
      row[i] = v;
    }
  }
  std::string out = "time_us";
  for (const auto* s : series) out += "," + s->name();
  out += '\n';
  for (auto& [t, row] : rows) {
    row.resize(series.size());
    out += std::to_string(t);
    for (const auto& cell : row) {
      out += ',';
      if (cell) out += format_real(*cell);
    }
    out += '\n';
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoFailure("cannot open " + path.string() + " for writing");
  os << out;
  if (!os) throw IoFailure("failed writing " + path.string());
}

inline void export_series_csv(const std::vector<TraceSeries>& series,
                              const std::filesystem::path& path) {
  std::vector<const TraceSeries*> ptrs;
  for (const auto& s : series) ptrs.push_back(&s);
  export_csv(ptrs, path);
}

/// Parses a file written by export_csv back into series.
inline std::vector<TraceSeries> read_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoFailure("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw IoFailure("empty csv " + path.string());
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : l) {
      if (c == ',') {
        cells.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    cells.push_back(cur);
    return cells;
  };
  const auto header = split(line);
  if (header.empty() || header[0] != "time_us") throw IoFailure("csv missing time_us column");
  std::vector<TraceSeries> out;
  for (std::size_t i = 1; i < header.size(); ++i) out.emplace_back(header[i]);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) throw IoFailure("ragged csv row");
    const SimTime t{std::stoull(cells[0])};
    for (std::size_t i = 1; i < cells.size(); ++i)
      if (!cells[i].empty()) out[i - 1].record(t, parse_real(cells[i]));
  }
  return out;
}

/// `key=value` lines, one per field, per-run rows keyed by controller/seed.
inline std::string summary_kv(const ComparisonSummary& c, std::string_view baseline = "newreno") {
  std::ostringstream os;
  auto kv = [&os](std::string_view k, const std::string& v) { os << k << '=' << v << '\n'; };
  kv("baseline", std::string(baseline));
  kv("runs", std::to_string(c.seeds.size()));
  std::string seeds;
  for (std::size_t i = 0; i < c.seeds.size(); ++i)
    seeds += (i ? "," : "") + std::to_string(c.seeds[i]);
  kv("seeds", seeds);
  kv("rl.mean_latency_ms", format_real(c.rl_latency_ms));
  kv("baseline.mean_latency_ms", format_real(c.newreno_latency_ms));
  kv("rl.mean_throughput_mbps", format_real(c.rl_throughput_mbps));
  kv("baseline.mean_throughput_mbps", format_real(c.newreno_throughput_mbps));
  kv("rl.mean_drops", format_real(c.rl_drops));
  kv("baseline.mean_drops", format_real(c.newreno_drops));
  kv("latency_improvement_pct", format_real(c.latency_improvement_pct));
  kv("throughput_improvement_pct", format_real(c.throughput_improvement_pct));
  auto rows = [&](std::string_view prefix, const std::vector<RunSummary>& rs) {
    for (const auto& r : rs) {
      const std::string p = std::string(prefix) + ".seed" + std::to_string(r.seed) + ".";
      kv(p + "latency_ms", format_real(r.mean_latency_ms));
      kv(p + "throughput_mbps", format_real(r.mean_throughput_mbps));
      kv(p + "drops", std::to_string(r.drops));
      kv(p + "delivered_bytes", std::to_string(r.delivered_bytes));
    }
  };
  rows("rl", c.rl_runs);
  rows("baseline", c.newreno_runs);
  // A single flow on an otherwise idle drop-tail bottleneck is already
  // saturated by New Reno, so large throughput gains are not expected.
  kv("throughput_gain_expected", "false");
  return os.str();
}

inline std::string summary_text(const ComparisonSummary& c, std::string_view baseline = "newreno") {
  std::ostringstream os;
  os << std::fixed;
  os << "controller comparison (rl vs " << baseline << "), " << c.seeds.size() << " seed(s)\n\n";
  os << std::left << std::setw(12) << "controller" << std::setw(8) << "seed" << std::right
     << std::setw(14) << "latency_ms" << std::setw(18) << "throughput_mbps" << std::setw(10)
     << "drops" << '\n';
  auto rows = [&](std::string_view name, const std::vector<RunSummary>& rs) {
    for (const auto& r : rs) {
      os << std::left << std::setw(12) << name << std::setw(8) << r.seed << std::right
         << std::setw(14) << std::setprecision(3) << r.mean_latency_ms << std::setw(18)
         << std::setprecision(4) << r.mean_throughput_mbps << std::setw(10) << r.drops << '\n';
    }
  };
  rows("rl", c.rl_runs);
  rows(baseline, c.newreno_runs);
  os << '\n';
  os << std::left << std::setw(12) << "mean rl" << std::setw(8) << "" << std::right
     << std::setw(14) << std::setprecision(3) << c.rl_latency_ms << std::setw(18)
     << std::setprecision(4) << c.rl_throughput_mbps << std::setw(10) << std::setprecision(1)
     << c.rl_drops << '\n';
  os << std::left << std::setw(12) << ("mean " + std::string(baseline)) << std::setw(8) << ""
     << std::right << std::setw(14) << std::setprecision(3) << c.newreno_latency_ms
     << std::setw(18) << std::setprecision(4) << c.newreno_throughput_mbps << std::setw(10)
     << std::setprecision(1) << c.newreno_drops << "\n\n";
  os << "latency improvement:    " << std::setprecision(2) << c.latency_improvement_pct << " %\n";
  os << "throughput improvement: " << std::setprecision(2) << c.throughput_improvement_pct
     << " %\n\n";
  os << "note: with one flow on a drop-tail bottleneck New Reno already fills the link, so\n"
        "      large throughput gains over it are not expected here; the latency gap\n"
        "      comes from not keeping the bottleneck buffer full.\n";
  return os.str();
}

}  // namespace cwndlab
