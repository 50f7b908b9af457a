#pragma once

// Experiment orchestration behind the command-line tool: configuration
// files, training runs, greedy evaluation and controller comparison.
//
// Config files are plain `key = value` lines; `#` starts a comment.  Units
// are part of the key name (`_bps`, `_us`, `_ms`, `_s`, `_pkts`).

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cwndlab/dqn.hpp"
#include "cwndlab/metrics.hpp"
#include "cwndlab/rlenv.hpp"
#include "cwndlab/simnet.hpp"

namespace cwndlab {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr SimTime kThroughputWindow = SimTime::millis(100);

struct ExperimentConfig {
  EnvConfig env;
  TrainConfig train;
  std::filesystem::path output_dir = "out";
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  ControllerKind controller = ControllerKind::NewReno;
  std::filesystem::path policy_path;
  bool event_log = false;

  void validate() const {
    try {
      env.validate();
      train.validate();
    } catch (const InvalidConfig& e) {
      throw ConfigError(e.what());
    }
    if (seeds.empty()) throw ConfigError("seed list must not be empty");
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    const double d = parse_real(v);
    if (!std::isfinite(d)) throw std::invalid_argument("non-finite");
    return d;
  } catch (const std::invalid_argument&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
}

inline SimTime scaled_time(const std::string& key, const std::string& v, double us_per_unit) {
  const double d = parse_double(key, v);
  if (d < 0) throw ConfigError("key '" + key + "' must be >= 0");
  return SimTime{static_cast<std::uint64_t>(std::llround(d * us_per_unit))};
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
  std::vector<T> out;
  std::string cur;
  std::istringstream is(v);
  while (std::getline(is, cur, ',')) {
    cur = trim(cur);
    if (cur.empty()) continue;
    out.push_back(static_cast<T>(parse_u64(key, cur)));
  }
  return out;
}

inline ControllerKind parse_controller(const std::string& v) {
  if (v == "newreno") return ControllerKind::NewReno;
  if (v == "rl") return ControllerKind::Agent;
  throw ConfigError("controller must be 'newreno' or 'rl', got '" + v + "'");
}

}  // namespace detail

/// Applies one `key = value` setting.
inline void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& v) {
  using namespace detail;
  auto& net = c.env.net;
  auto& tr = c.train;
  if (key == "access_bandwidth_bps") net.access_bandwidth = parse_u64(key, v);
  else if (key == "bottleneck_bandwidth_bps") net.bottleneck_bandwidth = parse_u64(key, v);
  else if (key == "access_delay_us") net.access_prop_delay = scaled_time(key, v, 1);
  else if (key == "access_delay_ms") net.access_prop_delay = scaled_time(key, v, 1e3);
  else if (key == "bottleneck_delay_us") net.bottleneck_prop_delay = scaled_time(key, v, 1);
  else if (key == "bottleneck_delay_ms") net.bottleneck_prop_delay = scaled_time(key, v, 1e3);
  else if (key == "queue_capacity_pkts") net.queue_capacity = parse_u64(key, v);
  else if (key == "duration_us") net.duration = scaled_time(key, v, 1);
  else if (key == "duration_s") net.duration = scaled_time(key, v, 1e6);
  else if (key == "start_jitter_us") net.start_jitter = scaled_time(key, v, 1);
  else if (key == "alpha") c.env.reward.alpha = parse_double(key, v);
  else if (key == "beta") c.env.reward.beta = parse_double(key, v);
  else if (key == "interval_us") c.env.interval = scaled_time(key, v, 1);
  else if (key == "interval_ms") c.env.interval = scaled_time(key, v, 1e3);
  else if (key == "gamma") tr.gamma = parse_double(key, v);
  else if (key == "learning_rate") tr.learning_rate = parse_double(key, v);
  else if (key == "batch_size") tr.batch_size = parse_u64(key, v);
  else if (key == "target_sync_interval") tr.target_sync_interval = parse_u64(key, v);
  else if (key == "warmup") tr.warmup = parse_u64(key, v);
  else if (key == "replay_capacity") tr.replay_capacity = parse_u64(key, v);
  else if (key == "episodes") tr.episodes = parse_u64(key, v);
  else if (key == "master_seed") tr.master_seed = parse_u64(key, v);
  else if (key == "eps_start") tr.epsilon.eps_start = parse_double(key, v);
  else if (key == "eps_min") tr.epsilon.eps_min = parse_double(key, v);
  else if (key == "eps_decay") tr.epsilon.decay = parse_double(key, v);
  else if (key == "hidden") tr.hidden = parse_list<std::size_t>(key, v);
  else if (key == "momentum") tr.momentum = parse_double(key, v);
  else if (key == "huber_delta") tr.huber_delta = parse_double(key, v);
  else if (key == "checkpoint_interval") tr.checkpoint_interval = parse_u64(key, v);
  else if (key == "seeds") c.seeds = parse_list<std::uint64_t>(key, v);
  else if (key == "output_dir") c.output_dir = v;
  else if (key == "controller") c.controller = parse_controller(v);
  else if (key == "policy_path") c.policy_path = v;
  else if (key == "event_log") c.event_log = v == "1" || v == "true";
  else throw ConfigError("unknown config key '" + key + "'");
}

inline void apply_config_text(ExperimentConfig& c, std::string_view text,
                              const std::string& origin = "config") {
  std::istringstream is{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    try {
      apply_setting(c, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void apply_config_file(ExperimentConfig& c, const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  apply_config_text(c, ss.str(), path.string());
}

/// Fully resolved configuration in the same format the parser reads.
inline std::string render_config(const ExperimentConfig& c) {
  std::ostringstream os;
  const auto& n = c.env.net;
  const auto& t = c.train;
  auto list = [](const auto& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };
  os << "access_bandwidth_bps = " << n.access_bandwidth << '\n'
     << "bottleneck_bandwidth_bps = " << n.bottleneck_bandwidth << '\n'
     << "access_delay_us = " << n.access_prop_delay.ticks << '\n'
     << "bottleneck_delay_us = " << n.bottleneck_prop_delay.ticks << '\n'
     << "queue_capacity_pkts = " << n.queue_capacity << '\n'
     << "duration_us = " << n.duration.ticks << '\n'
     << "start_jitter_us = " << n.start_jitter.ticks << '\n'
     << "alpha = " << format_real(c.env.reward.alpha) << '\n'
     << "beta = " << format_real(c.env.reward.beta) << '\n'
     << "interval_us = " << c.env.interval.ticks << '\n'
     << "gamma = " << format_real(t.gamma) << '\n'
     << "learning_rate = " << format_real(t.learning_rate) << '\n'
     << "batch_size = " << t.batch_size << '\n'
     << "target_sync_interval = " << t.target_sync_interval << '\n'
     << "warmup = " << t.warmup << '\n'
     << "replay_capacity = " << t.replay_capacity << '\n'
     << "episodes = " << t.episodes << '\n'
     << "master_seed = " << t.master_seed << '\n'
     << "eps_start = " << format_real(t.epsilon.eps_start) << '\n'
     << "eps_min = " << format_real(t.epsilon.eps_min) << '\n'
     << "eps_decay = " << format_real(t.epsilon.decay) << '\n'
     << "hidden = " << list(t.hidden) << '\n'
     << "momentum = " << format_real(t.momentum) << '\n'
     << "huber_delta = " << format_real(t.huber_delta) << '\n'
     << "checkpoint_interval = " << t.checkpoint_interval << '\n'
     << "seeds = " << list(c.seeds) << '\n'
     << "output_dir = " << c.output_dir.string() << '\n'
     << "controller = " << to_string(c.controller) << '\n'
     << "policy_path = " << c.policy_path.string() << '\n'
     << "event_log = " << (c.event_log ? "true" : "false") << '\n';
  return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoFailure("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw IoFailure("failed writing " + path.string());
}

inline void write_manifest(const ExperimentConfig& c, std::string_view command) {
  write_text(c.output_dir / "manifest.cfg",
             "# cwndlab " + std::string(command) + " manifest\n" + render_config(c));
}

/// Traces and figures from one evaluation episode.
struct RunOutput {
  RunSummary summary;
  TraceSeries rtt_ms{"rtt_ms"};
  TraceSeries cwnd_bytes{"cwnd_bytes"};
  TraceSeries throughput_mbps{"throughput_mbps"};
  TraceSeries reward{"reward"};
  TraceSeries delivered_bytes{"delivered_bytes"};
  std::uint64_t steps = 0;
};

/// One greedy episode.  New Reno runs ignore the policy and hold the agent
/// action fixed, so both controllers share the same sampling cadence.
inline RunOutput run_episode(const EnvConfig& base, ControllerKind controller,
                             const QNetwork* policy, std::uint64_t seed,
                             std::ostream* event_log = nullptr) {
  EnvConfig cfg = base;
  cfg.controller = controller;
  cfg.net.seed = seed;
  if (controller == ControllerKind::Agent && policy == nullptr)
    throw std::invalid_argument("rl controller needs a policy");
  CwndEnv env(cfg);
  env.set_event_log(event_log);
  Observation obs = env.reset(cfg.net);

  RunOutput out;
  out.delivered_bytes.record(SimTime{}, 0.0);
  while (!env.done()) {
    const Action a = controller == ControllerKind::Agent
                         ? greedy_action(*policy, normalize(obs, cfg.net.bottleneck_bandwidth))
                         : Action::Hold;
    const StepResult r = env.step(a);
    obs = r.observation;
    out.rtt_ms.record(r.time, r.observation.rtt.as_millis());
    out.cwnd_bytes.record(r.time, static_cast<double>(r.observation.cwnd));
    out.reward.record(r.time, r.reward);
    out.delivered_bytes.record(r.time, static_cast<double>(env.session().delivered_bytes()));
    ++out.steps;
  }
  const SimTime end = cfg.net.duration;
  out.throughput_mbps = throughput_over(out.delivered_bytes, kThroughputWindow, end);

  auto& s = out.summary;
  s.controller = std::string(to_string(controller));
  s.seed = seed;
  s.net = cfg.net;
  s.delivered_bytes = env.session().delivered_bytes();
  s.drops = env.session().topology().total_drops();
  s.mean_throughput_mbps = static_cast<double>(s.delivered_bytes) * 8.0 / end.as_seconds() / 1e6;
  s.mean_latency_ms = time_weighted_mean(out.rtt_ms, SimTime{}, true).value;
  return out;
}

inline void write_run_csvs(const RunOutput& run, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  export_csv({&run.rtt_ms}, dir / "rtt.csv");
  export_csv({&run.throughput_mbps}, dir / "throughput.csv");
  export_csv({&run.cwnd_bytes}, dir / "cwnd.csv");
  export_csv({&run.reward}, dir / "reward.csv");
}

inline std::filesystem::path run_dir(const ExperimentConfig& c, std::string_view controller,
                                     std::uint64_t seed) {
  return c.output_dir / std::string(controller) / ("seed_" + std::to_string(seed));
}

using ProgressFn = std::function<void(const std::string&)>;

struct TrainOutcome {
  TrainResult result;
  std::filesystem::path policy_file;
};

/// Trains a policy and writes policy.bin, reward/epsilon/loss CSVs and the
/// manifest into the output directory.
inline constexpr std::uint64_t kValidationRuns = 3;
inline constexpr std::uint64_t kValidationSeedBase = 1'000'000;

inline TrainOutcome run_train(const ExperimentConfig& c, const ProgressFn& progress = {}) {
  c.validate();
  std::filesystem::create_directories(c.output_dir);
  EnvConfig env_cfg = c.env;
  env_cfg.controller = ControllerKind::Agent;
  NormalizedEnv env(env_cfg);

  TraceSeries reward("episode_reward"), epsilon("epsilon"), loss("mean_loss");
  const std::uint64_t dur = c.env.net.duration.ticks;
  auto on_episode = [&](std::uint64_t ep, const EpisodeStats& st) {
    const SimTime t{(ep + 1) * dur};
    reward.record(t, st.total_reward);
    epsilon.record(t, st.epsilon);
    if (std::isfinite(st.mean_loss)) loss.record(t, st.mean_loss);
    if (progress && ((ep + 1) % 10 == 0 || ep + 1 == c.train.episodes)) {
      progress("episode " + std::to_string(ep + 1) + "/" + std::to_string(c.train.episodes) +
               " reward=" + format_real(st.total_reward) + " eps=" + format_real(st.epsilon));
    }
  };
  // Checkpoints are scored on held-out start seeds, disjoint from the
  // training episode seeds and from the small evaluation seeds.
  auto score = [&](const QNetwork& net) {
    double total = 0.0;
    for (std::uint64_t i = 0; i < kValidationRuns; ++i) {
      const auto run = run_episode(env_cfg, ControllerKind::Agent, &net,
                                   episode_seed(c.train.master_seed, kValidationSeedBase + i));
      total += run.reward.sum();
    }
    return total / static_cast<double>(kValidationRuns);
  };
  TrainOutcome out;
  out.result = train(env, c.train, on_episode, score);
  out.policy_file = c.output_dir / "policy.bin";
  save_policy(out.result.policy, out.policy_file);
  export_csv({&reward}, c.output_dir / "reward.csv");
  export_csv({&epsilon}, c.output_dir / "epsilon.csv");
  export_csv({&loss}, c.output_dir / "loss.csv");
  write_manifest(c, "train");
  return out;
}

inline std::vector<RunOutput> run_controller(const ExperimentConfig& c, ControllerKind k,
                                             const QNetwork* policy) {
  std::vector<RunOutput> runs;
  for (auto seed : c.seeds) {
    std::ofstream log;
    const auto dir = run_dir(c, to_string(k), seed);
    std::filesystem::create_directories(dir);
    if (c.event_log) log.open(dir / "events.log", std::ios::binary | std::ios::trunc);
    runs.push_back(run_episode(c.env, k, policy, seed, c.event_log ? &log : nullptr));
    write_run_csvs(runs.back(), dir);
  }
  return runs;
}

inline std::optional<QNetwork> load_policy_for(const ExperimentConfig& c, ControllerKind k) {
  if (k != ControllerKind::Agent) return std::nullopt;
  if (c.policy_path.empty()) throw ConfigError("controller rl requires --policy / policy_path");
  return load_policy(c.policy_path);
}

/// Greedy evaluation of one controller on every seed.
inline std::vector<RunOutput> run_eval(const ExperimentConfig& c) {
  c.validate();
  std::filesystem::create_directories(c.output_dir);
  const auto policy = load_policy_for(c, c.controller);
  auto runs = run_controller(c, c.controller, policy ? &*policy : nullptr);
  write_manifest(c, "eval");
  return runs;
}

/// Combined per-seed CSV: one column per controller/seed.
inline void write_combined(const std::filesystem::path& path,
                           const std::vector<std::pair<std::string, const TraceSeries*>>& cols) {
  std::vector<TraceSeries> renamed;
  renamed.reserve(cols.size());
  for (const auto& [name, s] : cols) {
    TraceSeries t(name);
    for (const auto& [time, v] : s->samples()) t.record(time, v);
    renamed.push_back(std::move(t));
  }
  export_series_csv(renamed, path);
}

/// Runs the RL policy and a baseline over the same seeds and writes the
/// comparison artifacts.
inline ComparisonSummary run_compare(const ExperimentConfig& c,
                                     ControllerKind baseline = ControllerKind::NewReno) {
  c.validate();
  std::filesystem::create_directories(c.output_dir);
  if (c.policy_path.empty()) throw ConfigError("compare requires --policy / policy_path");
  const QNetwork policy = load_policy(c.policy_path);
  const auto rl = run_controller(c, ControllerKind::Agent, &policy);
  std::vector<RunOutput> base;
  if (baseline == ControllerKind::Agent) {
    base = rl;
  } else {
    base = run_controller(c, ControllerKind::NewReno, nullptr);
  }

  std::vector<RunSummary> rl_s, base_s;
  for (const auto& r : rl) rl_s.push_back(r.summary);
  for (const auto& r : base) base_s.push_back(r.summary);
  const auto summary = summarize(rl_s, base_s);

  const std::string bname(to_string(baseline));
  auto combined = [&](const char* file, TraceSeries RunOutput::*field) {
    std::vector<std::pair<std::string, const TraceSeries*>> cols;
    for (const auto& r : rl) cols.emplace_back("rl_seed" + std::to_string(r.summary.seed), &(r.*field));
    const std::string prefix = baseline == ControllerKind::Agent ? "baseline_rl" : bname;
    for (const auto& r : base)
      cols.emplace_back(prefix + "_seed" + std::to_string(r.summary.seed), &(r.*field));
    write_combined(c.output_dir / file, cols);
  };
  combined("rtt.csv", &RunOutput::rtt_ms);
  combined("throughput.csv", &RunOutput::throughput_mbps);
  combined("cwnd.csv", &RunOutput::cwnd_bytes);
  write_text(c.output_dir / "summary.kv", summary_kv(summary, bname));
  write_text(c.output_dir / "summary.txt", summary_text(summary, bname));
  write_manifest(c, "compare");
  return summary;
}

}  // namespace cwndlab
