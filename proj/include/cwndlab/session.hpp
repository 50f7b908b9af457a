#pragma once

// One bulk TCP flow from source to sink across a dumbbell.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>

#include "cwndlab/random.hpp"
#include "cwndlab/simnet.hpp"
#include "cwndlab/tcp.hpp"

namespace cwndlab {

/// Seed-derived flow start offset in [0, cfg.start_jitter).
constexpr SimTime flow_start_offset(const DumbbellConfig& cfg) {
  if (cfg.start_jitter.ticks == 0) return SimTime{};
  return SimTime{Rng::mix(cfg.seed) % cfg.start_jitter.ticks};
}

/// Counters accumulated between reads by a controller.
struct StepCounters {
  std::uint64_t segments_acked = 0;
  std::uint64_t delivered_bytes = 0;
  std::uint64_t loss_events = 0;
};

struct FlowOptions {
  std::uint32_t mss = kDefaultMss;
  std::optional<std::uint64_t> app_limit;
  /// Overrides the seed-derived start offset when set.
  std::optional<SimTime> start_at;
  /// Run TcpSender::check_invariants after every transport event.
  bool check_invariants = true;
};

class FlowSession {
 public:
  FlowSession(const DumbbellConfig& cfg, std::unique_ptr<CongestionControl> cc,
              FlowOptions opts = {})
      : cfg_(cfg), topo_(sim_), sender_(std::move(cc), opts.mss, opts.app_limit),
        check_(opts.check_invariants) {
    nodes_ = build_dumbbell(topo_, cfg_);
    topo_.set_host_handler(nodes_.sink, [this](const Packet& p) { on_sink(p); });
    topo_.set_host_handler(nodes_.source, [this](const Packet& p) { on_source(p); });
    start_time_ = opts.start_at ? *opts.start_at : flow_start_offset(cfg_);
    sim_.schedule(
        start_time_, EventKind::TimerFire, "source", [this] {
          started_ = true;
          apply(sender_.try_send(sim_.now()));
        },
        [] { return std::string("flow-start"); });
  }

  FlowSession(const FlowSession&) = delete;
  FlowSession& operator=(const FlowSession&) = delete;

  Simulator& sim() { return sim_; }
  const Simulator& sim() const { return sim_; }
  Topology& topology() { return topo_; }
  const Topology& topology() const { return topo_; }
  TcpSender& sender() { return sender_; }
  const TcpSender& sender() const { return sender_; }
  const TcpReceiver& receiver() const { return receiver_; }
  const DumbbellConfig& config() const { return cfg_; }
  const DumbbellNodes& nodes() const { return nodes_; }
  SimTime start_time() const { return start_time_; }

  StepCounters& counters() { return counters_; }
  const StepCounters& totals() const { return totals_; }
  std::uint64_t delivered_bytes() const { return receiver_.delivered_bytes(); }

  /// Called with the sender state after every transport event.
  void set_event_hook(std::function<void(const ConnectionState&, SimTime)> hook) {
    hook_ = std::move(hook);
  }

  /// Re-runs the sender's transmission check, e.g. after a controller
  /// changed cwnd between events.
  void kick() {
    if (started_) apply(sender_.try_send(sim_.now()));
  }

  bool started() const { return started_; }

  RunStats run_until(SimTime end) {
    sim_.run_until(end);
    return sim_.stats();
  }

 private:
  void on_sink(const Packet& p) {
    const std::uint64_t before = receiver_.delivered_bytes();
    Packet ack = receiver_.on_data(p);
    const std::uint64_t fresh = receiver_.delivered_bytes() - before;
    counters_.delivered_bytes += fresh;
    totals_.delivered_bytes += fresh;
    ack.id = sim_.next_packet_id();
    ack.payload_size = 0;
    ack.sent_at = sim_.now();
    topo_.send_from(nodes_.sink, ack);
  }

  void on_source(const Packet& p) { apply(sender_.on_ack_received(p.ack_seq, sim_.now())); }

  void on_timer() { apply(sender_.on_timeout(sim_.now())); }

  void apply(TransportActions&& a) {
    counters_.segments_acked += a.segments_acked;
    totals_.segments_acked += a.segments_acked;
    if (a.loss_detected) {
      ++counters_.loss_events;
      ++totals_.loss_events;
    }
    for (auto& p : a.packets) {
      p.id = sim_.next_packet_id();
      p.sent_at = sim_.now();
      topo_.send_from(nodes_.source, p);
    }
    switch (a.timer) {
      case TimerOp::None: break;
      case TimerOp::Stop:
        if (timer_) sim_.cancel(*timer_);
        timer_.reset();
        break;
      case TimerOp::Restart:
        if (timer_) sim_.cancel(*timer_);
        timer_ = sim_.schedule(
            sim_.now() + sender_.state().rto, EventKind::TimerFire, "source",
            [this] {
              timer_.reset();
              on_timer();
            },
            [] { return std::string("rto"); });
        break;
    }
    if (check_) sender_.check_invariants();
    if (hook_) hook_(sender_.state(), sim_.now());
  }

  DumbbellConfig cfg_;
  Simulator sim_;
  Topology topo_;
  DumbbellNodes nodes_;
  TcpSender sender_;
  TcpReceiver receiver_;
  bool check_;
  bool started_ = false;
  SimTime start_time_{};
  std::optional<EventId> timer_;
  StepCounters counters_;
  StepCounters totals_;
  std::function<void(const ConnectionState&, SimTime)> hook_;
};

}  // namespace cwndlab
