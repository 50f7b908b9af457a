#pragma once

// Gym-style environment around a single dumbbell flow.  The agent acts on a
// fixed sim-time cadence: each step applies one window action, advances the
// simulator by one decision interval and reports the new observation and the
// throughput/latency reward.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cwndlab/session.hpp"
#include "cwndlab/simnet.hpp"
#include "cwndlab/tcp.hpp"

namespace cwndlab {

class EpisodeFinished : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct Observation {
  std::uint64_t bytes_in_flight = 0;
  std::uint64_t cwnd = 0;
  SimTime rtt{};  // smoothed; zero until the first sample
  std::uint64_t segments_acked = 0;

  friend bool operator==(const Observation&, const Observation&) = default;
};

/// Discrete window actions.  The numeric values index Q-network outputs.
enum class Action : int { Increase = 0, Decrease = 1, Hold = 2 };
inline constexpr int kNumActions = 3;

constexpr std::string_view to_string(Action a) {
  switch (a) {
    case Action::Increase: return "increase";
    case Action::Decrease: return "decrease";
    case Action::Hold: return "hold";
  }
  return "?";
}

constexpr Action action_from_index(int i) {
  if (i < 0 || i >= kNumActions) throw std::out_of_range("action index");
  return static_cast<Action>(i);
}

struct RewardParams {
  double alpha = 1.0;  // per Mbps of throughput
  double beta = 0.02;  // per ms of latency

  void validate() const {
    if (!(alpha > 0.0)) throw InvalidConfig("alpha must be > 0");
    if (!(beta >= 0.0)) throw InvalidConfig("beta must be >= 0");
  }
};

struct StepInfo {
  double throughput_mbps = 0.0;
  double latency_ms = 0.0;
  std::uint64_t drops_this_step = 0;
  std::uint64_t delivered_bytes = 0;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
  SimTime time{};
};

/// Snapshot of the four state features.  Reading resets the acked-segment
/// counter.
inline Observation observe(const ConnectionState& state, StepCounters& counters) {
  Observation o;
  o.bytes_in_flight = state.bytes_in_flight();
  o.cwnd = state.cwnd;
  o.rtt = state.srtt;
  o.segments_acked = counters.segments_acked;
  counters.segments_acked = 0;
  return o;
}

/// Increase: +1 MSS.  Decrease: halve, floored at 1 MSS.  Hold: no change.
inline void apply_action(ConnectionState& state, Action a) {
  switch (a) {
    case Action::Increase: state.cwnd += state.mss; break;
    case Action::Decrease: state.cwnd = std::max<std::uint64_t>(state.cwnd / 2, state.mss); break;
    case Action::Hold: break;
  }
}

constexpr double compute_reward(double throughput_mbps, double latency_ms, const RewardParams& p) {
  return p.alpha * throughput_mbps - p.beta * latency_ms;
}

inline constexpr SimTime kRttReference = SimTime::millis(100);
inline constexpr double kSegmentsReference = 10.0;
inline constexpr double kFeatureClamp = 10.0;

/// Network input features, each clamped to [0, 10]:
/// in-flight and cwnd over the reference BDP (bottleneck rate x 100 ms),
/// RTT over 100 ms, acked segments over 10.
inline std::array<double, 4> normalize(const Observation& o, std::uint64_t bottleneck_bps) {
  const double bdp_bytes =
      static_cast<double>(bottleneck_bps) * kRttReference.as_seconds() / 8.0;
  auto clamp = [](double v) { return std::clamp(v, 0.0, kFeatureClamp); };
  return {clamp(static_cast<double>(o.bytes_in_flight) / bdp_bytes),
          clamp(static_cast<double>(o.cwnd) / bdp_bytes),
          clamp(static_cast<double>(o.rtt.ticks) / static_cast<double>(kRttReference.ticks)),
          clamp(static_cast<double>(o.segments_acked) / kSegmentsReference)};
}

/// Congestion control used while the agent drives the window: no growth on
/// ACKs, and loss responses halve the current window.
class AgentWindowControl final : public CongestionControl {
 public:
  std::string_view name() const override { return "rl"; }
  void increase_window(ConnectionState&, std::uint32_t) override {}
  std::uint64_t get_ssthresh(const ConnectionState& s, std::uint64_t) override {
    return std::max<std::uint64_t>(s.cwnd / 2, 2ULL * s.mss);
  }
};

enum class ControllerKind { NewReno, Agent };

constexpr std::string_view to_string(ControllerKind k) {
  return k == ControllerKind::NewReno ? "newreno" : "rl";
}

struct EnvConfig {
  DumbbellConfig net;
  RewardParams reward;
  SimTime interval = SimTime::millis(10);
  ControllerKind controller = ControllerKind::Agent;
  /// Keep a per-step record of the episode (for traces and CSV export).
  bool record_steps = false;

  void validate() const {
    net.validate();
    reward.validate();
    if (interval.ticks == 0) throw InvalidConfig("decision interval must be > 0");
  }

  std::uint64_t steps_per_episode() const {
    return (net.duration.ticks + interval.ticks - 1) / interval.ticks;
  }
};

struct StepRecord {
  SimTime time{};
  Action action = Action::Hold;
  Observation observation;
  double reward = 0.0;
  StepInfo info;
  std::uint64_t delivered_total = 0;
  std::uint64_t drops_total = 0;
};

class CwndEnv {
 public:
  explicit CwndEnv(EnvConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const EnvConfig& config() const { return cfg_; }

  /// Fresh simulator and connection; `seed` replaces the topology seed.
  Observation reset(std::uint64_t seed) {
    DumbbellConfig net = cfg_.net;
    net.seed = seed;
    return reset(net);
  }

  Observation reset(const DumbbellConfig& net) {
    std::unique_ptr<CongestionControl> cc;
    if (cfg_.controller == ControllerKind::Agent) {
      cc = std::make_unique<AgentWindowControl>();
    } else {
      cc = std::make_unique<NewReno>();
    }
    session_ = std::make_unique<FlowSession>(net, std::move(cc), flow_options_);
    if (event_log_ != nullptr) session_->sim().set_event_log(event_log_);
    seen_drops_ = 0;
    steps_ = 0;
    records_.clear();
    pending_.reset();
    done_ = false;
    return observe(session_->sender().state(), session_->counters());
  }

  StepResult step(Action a) {
    if (!session_) throw EpisodeFinished("environment not reset");
    if (done_) throw EpisodeFinished("episode already finished");
    auto& sim = session_->sim();
    const SimTime start = sim.now();
    if (cfg_.controller == ControllerKind::Agent) {
      apply_action(session_->sender().mutable_state(), a);
      session_->kick();
    }
    const SimTime end = std::min(start + cfg_.interval, session_->config().duration);
    sim.schedule(
        end, EventKind::AgentStep, "source", [this] { take_snapshot(); },
        [this] { return describe_state(); });
    session_->run_until(end);
    if (!pending_) throw std::logic_error("agent step event did not fire");
    Snapshot snap = *pending_;
    pending_.reset();

    StepResult r;
    r.time = end;
    r.observation = snap.observation;
    r.info.delivered_bytes = snap.delivered;
    r.info.drops_this_step = snap.drops;
    const double span_s = (end - start).as_seconds();
    r.info.throughput_mbps =
        span_s > 0.0 ? static_cast<double>(snap.delivered) * 8.0 / span_s / 1e6 : 0.0;
    r.info.latency_ms = snap.observation.rtt.as_millis();
    r.reward = compute_reward(r.info.throughput_mbps, r.info.latency_ms, cfg_.reward);
    ++steps_;
    done_ = end >= session_->config().duration;
    r.done = done_;
    if (cfg_.record_steps) {
      records_.push_back({end, a, r.observation, r.reward, r.info, session_->delivered_bytes(),
                          session_->topology().total_drops()});
    }
    return r;
  }

  bool done() const { return done_; }
  std::uint64_t steps_taken() const { return steps_; }
  const std::vector<StepRecord>& records() const { return records_; }
  FlowSession& session() { return *session_; }
  const FlowSession& session() const { return *session_; }
  bool has_session() const { return session_ != nullptr; }

  void set_flow_options(FlowOptions o) { flow_options_ = o; }
  /// Event log for subsequent resets (nullptr disables).
  void set_event_log(std::ostream* os) { event_log_ = os; }

 private:
  struct Snapshot {
    Observation observation;
    std::uint64_t delivered = 0;
    std::uint64_t drops = 0;
  };

  void take_snapshot() {
    Snapshot s;
    auto& c = session_->counters();
    s.observation = observe(session_->sender().state(), c);
    s.delivered = c.delivered_bytes;
    c.delivered_bytes = 0;
    c.loss_events = 0;
    const std::uint64_t drops = session_->topology().total_drops();
    s.drops = drops - seen_drops_;
    seen_drops_ = drops;
    pending_ = s;
  }

  std::string describe_state() const {
    const auto& st = session_->sender().state();
    return "bif=" + std::to_string(st.bytes_in_flight()) + " cwnd=" + std::to_string(st.cwnd) +
           " rtt_us=" + std::to_string(st.srtt.ticks) +
           " acked=" + std::to_string(session_->counters().segments_acked);
  }

  EnvConfig cfg_;
  FlowOptions flow_options_;
  std::unique_ptr<FlowSession> session_;
  std::ostream* event_log_ = nullptr;
  std::optional<Snapshot> pending_;
  std::uint64_t seen_drops_ = 0;
  std::uint64_t steps_ = 0;
  bool done_ = false;
  std::vector<StepRecord> records_;
};

using StateVector = std::array<double, 4>;

/// What a learner sees after one step.
struct Feedback {
  StateVector next_state{};
  double reward = 0.0;
  bool done = false;
};

/// CwndEnv seen through normalized feature vectors and integer actions.
class NormalizedEnv {
 public:
  explicit NormalizedEnv(EnvConfig cfg) : env_(std::move(cfg)) {}

  StateVector reset(std::uint64_t seed) {
    return normalize(env_.reset(seed), env_.config().net.bottleneck_bandwidth);
  }

  Feedback step(int action) {
    last_ = env_.step(action_from_index(action));
    return {normalize(last_.observation, env_.config().net.bottleneck_bandwidth), last_.reward,
            last_.done};
  }

  CwndEnv& env() { return env_; }
  const StepResult& last_step() const { return last_; }

 private:
  CwndEnv env_;
  StepResult last_;
};

}  // namespace cwndlab
