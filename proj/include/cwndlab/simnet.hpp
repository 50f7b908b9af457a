#pragma once

// Deterministic discrete-event network simulation core.
//
// A run is a single-threaded loop over a priority queue ordered by
// (time, insertion counter).  Links are directed, serialize one packet at a
// time, and buffer waiting packets in a drop-tail FIFO.  The dumbbell builder
// produces a chain source - router-0 - router-1 - sink with one directed link
// per direction between neighbours.

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <ostream>
#include <queue>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

namespace cwndlab {

/// Simulated time in integer microsecond ticks.
struct SimTime {
  std::uint64_t ticks = 0;

  constexpr SimTime() = default;
  constexpr explicit SimTime(std::uint64_t us) : ticks(us) {}

  static constexpr SimTime micros(std::uint64_t us) { return SimTime{us}; }
  static constexpr SimTime millis(std::uint64_t ms) { return SimTime{ms * 1000ULL}; }
  static constexpr SimTime seconds(std::uint64_t s) { return SimTime{s * 1000000ULL}; }
  static constexpr SimTime max() { return SimTime{std::numeric_limits<std::uint64_t>::max()}; }

  constexpr double as_millis() const { return static_cast<double>(ticks) / 1e3; }
  constexpr double as_seconds() const { return static_cast<double>(ticks) / 1e6; }

  friend constexpr auto operator<=>(SimTime, SimTime) = default;
  friend constexpr SimTime operator+(SimTime a, SimTime b) { return SimTime{a.ticks + b.ticks}; }
  friend constexpr SimTime operator-(SimTime a, SimTime b) { return SimTime{a.ticks - b.ticks}; }
  constexpr SimTime& operator+=(SimTime o) {
    ticks += o.ticks;
    return *this;
  }
};

inline std::ostream& operator<<(std::ostream& os, SimTime t) { return os << t.ticks << "us"; }

inline constexpr std::uint32_t kHeaderBytes = 40;
inline constexpr std::uint32_t kDefaultMss = 1460;

struct Packet {
  std::uint64_t id = 0;
  std::uint32_t flow_id = 0;
  std::uint64_t seq = 0;
  std::uint32_t payload_size = 0;
  bool is_ack = false;
  std::uint64_t ack_seq = 0;
  SimTime sent_at{};
  SimTime enqueued_at{};

  std::uint32_t wire_bytes() const { return payload_size + kHeaderBytes; }
};

class SchedulingInPast : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class InvalidConfig : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class EventKind { PacketArrival, LinkDeparture, TimerFire, AgentStep, SimEnd };

constexpr std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::PacketArrival: return "PacketArrival";
    case EventKind::LinkDeparture: return "LinkDeparture";
    case EventKind::TimerFire: return "TimerFire";
    case EventKind::AgentStep: return "AgentStep";
    case EventKind::SimEnd: return "SimEnd";
  }
  return "?";
}

using EventId = std::uint64_t;

struct Event {
  SimTime at{};
  std::uint64_t seq_no = 0;
  EventKind kind = EventKind::SimEnd;
  std::string node;
  // Lazily rendered so that runs without an event log pay nothing for it.
  std::function<std::string()> detail;
  std::function<void()> action;
};

struct RunStats {
  std::uint64_t packets_sent = 0;
  std::uint64_t packets_delivered = 0;
  std::uint64_t packets_dropped = 0;
  std::uint64_t events_executed = 0;
  double wall_seconds = 0.0;
};

/// Event queue and virtual clock.
class Simulator {
 public:
  SimTime now() const { return now_; }

  /// Inserts an event; returns its insertion counter, usable with cancel().
  EventId schedule(SimTime at, EventKind kind, std::string node, std::function<void()> action,
                   std::function<std::string()> detail = {}) {
    if (at < now_) {
      throw SchedulingInPast("event at " + std::to_string(at.ticks) + "us scheduled from " +
                             std::to_string(now_.ticks) + "us");
    }
    Event ev;
    ev.at = at;
    ev.seq_no = next_seq_++;
    ev.kind = kind;
    ev.node = std::move(node);
    ev.detail = std::move(detail);
    ev.action = std::move(action);
    const EventId id = ev.seq_no;
    queue_.push(std::move(ev));
    return id;
  }

  void cancel(EventId id) { cancelled_.insert(id); }

  bool empty() const { return queue_.size() == cancelled_.size(); }
  std::size_t pending() const { return queue_.size() - cancelled_.size(); }

  /// Executes every event with time <= end in (time, seq_no) order, then
  /// leaves the clock at `end`.
  std::uint64_t run_until(SimTime end) {
    std::uint64_t executed = 0;
    while (!queue_.empty() && queue_.top().at <= end) {
      Event ev = queue_.top();
      queue_.pop();
      if (auto it = cancelled_.find(ev.seq_no); it != cancelled_.end()) {
        cancelled_.erase(it);
        continue;
      }
      now_ = ev.at;
      if (log_ != nullptr) {
        *log_ << ev.at.ticks << ' ' << to_string(ev.kind) << ' ' << ev.node << ' '
              << (ev.detail ? ev.detail() : std::string("-")) << '\n';
      }
      ++executed;
      ++stats_.events_executed;
      if (ev.action) ev.action();
    }
    if (end > now_) now_ = end;
    return executed;
  }

  /// Optional line-oriented event log: `time_us kind node detail`.
  void set_event_log(std::ostream* os) { log_ = os; }

  RunStats& stats() { return stats_; }
  const RunStats& stats() const { return stats_; }

  std::uint64_t next_packet_id() { return next_packet_id_++; }

 private:
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      if (a.at != b.at) return a.at > b.at;
      return a.seq_no > b.seq_no;
    }
  };

  SimTime now_{};
  std::uint64_t next_seq_ = 0;
  std::uint64_t next_packet_id_ = 0;
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  std::unordered_set<EventId> cancelled_;
  std::ostream* log_ = nullptr;
  RunStats stats_;
};

/// Serialization delay: ceil(wire_bits / bandwidth) in microseconds.
constexpr SimTime serialization(std::uint64_t wire_bytes, std::uint64_t bandwidth_bps) {
  const std::uint64_t bits_us = wire_bytes * 8ULL * 1000000ULL;
  return SimTime{(bits_us + bandwidth_bps - 1) / bandwidth_bps};
}

inline SimTime serialization(const Packet& p, std::uint64_t bandwidth_bps) {
  return serialization(p.wire_bytes(), bandwidth_bps);
}

using NodeId = std::size_t;

/// Directed point-to-point link with a drop-tail transmit queue.  The packet
/// currently being serialized is not counted against queue capacity.
class Link {
 public:
  using Deliver = std::function<void(const Packet&)>;

  Link(Simulator& sim, std::string name, NodeId from, NodeId to, std::uint64_t bandwidth_bps,
       SimTime prop_delay, std::size_t queue_capacity)
      : sim_(&sim),
        name_(std::move(name)),
        from_(from),
        to_(to),
        bandwidth_(bandwidth_bps),
        prop_delay_(prop_delay),
        capacity_(queue_capacity) {}

  void set_receiver(Deliver d) { deliver_ = std::move(d); }

  /// Offers a packet to the link at the current simulation time.
  void enqueue(Packet p) {
    p.enqueued_at = sim_->now();
    if (!transmitting_) {
      ++held_;
      start_transmission(std::move(p));
      return;
    }
    if (queue_.size() >= capacity_) {
      ++drops_;
      ++sim_->stats().packets_dropped;
      return;
    }
    queue_.push_back(std::move(p));
    ++held_;
    if (queue_.size() > max_occupancy_) max_occupancy_ = queue_.size();
  }

  const std::string& name() const { return name_; }
  NodeId from() const { return from_; }
  NodeId to() const { return to_; }
  std::uint64_t bandwidth() const { return bandwidth_; }
  SimTime prop_delay() const { return prop_delay_; }
  std::size_t queue_capacity() const { return capacity_; }
  std::size_t queue_length() const { return queue_.size(); }
  std::size_t max_occupancy() const { return max_occupancy_; }
  SimTime busy_until() const { return busy_until_; }
  std::uint64_t drops() const { return drops_; }
  std::uint64_t bytes_departed() const { return bytes_departed_; }
  std::uint64_t packets_departed() const { return packets_departed_; }
  /// Packets owned by the link: queued, serializing, or propagating.
  std::uint64_t packets_held() const { return held_; }

 private:
  void start_transmission(Packet p) {
    transmitting_ = true;
    busy_until_ = sim_->now() + serialization(p, bandwidth_);
    const std::uint64_t pid = p.id;
    sim_->schedule(
        busy_until_, EventKind::LinkDeparture, name_,
        [this, p = std::move(p)]() mutable { on_departure(std::move(p)); },
        [pid] { return "pkt=" + std::to_string(pid); });
  }

  void on_departure(Packet p) {
    bytes_departed_ += p.wire_bytes();
    ++packets_departed_;
    const std::uint64_t pid = p.id;
    sim_->schedule(
        sim_->now() + prop_delay_, EventKind::PacketArrival, name_,
        [this, p = std::move(p)] {
          --held_;
          if (deliver_) deliver_(p);
        },
        [pid] { return "pkt=" + std::to_string(pid); });
    transmitting_ = false;
    if (!queue_.empty()) {
      Packet next = std::move(queue_.front());
      queue_.pop_front();
      start_transmission(std::move(next));
    }
  }

  Simulator* sim_;
  std::string name_;
  NodeId from_;
  NodeId to_;
  std::uint64_t bandwidth_;
  SimTime prop_delay_;
  std::size_t capacity_;
  Deliver deliver_;
  std::deque<Packet> queue_;
  bool transmitting_ = false;
  SimTime busy_until_{};
  std::uint64_t drops_ = 0;
  std::uint64_t bytes_departed_ = 0;
  std::uint64_t packets_departed_ = 0;
  std::uint64_t held_ = 0;
  std::size_t max_occupancy_ = 0;
};

struct DumbbellConfig {
  std::uint64_t access_bandwidth = 10'000'000;
  std::uint64_t bottleneck_bandwidth = 2'000'000;
  SimTime access_prop_delay = SimTime::millis(2);
  SimTime bottleneck_prop_delay = SimTime::millis(10);
  std::size_t queue_capacity = 100;
  SimTime duration = SimTime::seconds(10);
  std::uint64_t seed = 1;
  /// Flow start is offset by a seed-derived amount in [0, start_jitter).
  SimTime start_jitter = SimTime::millis(5);

  void validate() const {
    if (access_bandwidth == 0) throw InvalidConfig("access_bandwidth must be > 0");
    if (bottleneck_bandwidth == 0) throw InvalidConfig("bottleneck_bandwidth must be > 0");
    if (queue_capacity < 1) throw InvalidConfig("queue_capacity must be >= 1");
    if (duration.ticks == 0) throw InvalidConfig("duration must be > 0");
  }

  /// Equality of everything except the seed.
  bool same_topology(const DumbbellConfig& o) const {
    return access_bandwidth == o.access_bandwidth && bottleneck_bandwidth == o.bottleneck_bandwidth &&
           access_prop_delay == o.access_prop_delay &&
           bottleneck_prop_delay == o.bottleneck_prop_delay && queue_capacity == o.queue_capacity &&
           duration == o.duration && start_jitter == o.start_jitter;
  }

  friend bool operator==(const DumbbellConfig&, const DumbbellConfig&) = default;
};

/// Linear chain of nodes.  Data packets travel towards the last node, ACKs
/// towards the first; routers forward without processing delay.
class Topology {
 public:
  using HostHandler = std::function<void(const Packet&)>;

  explicit Topology(Simulator& sim) : sim_(&sim) {}
  Topology(const Topology&) = delete;
  Topology& operator=(const Topology&) = delete;

  NodeId add_node(std::string name) {
    names_.push_back(std::move(name));
    forward_.push_back(kNone);
    backward_.push_back(kNone);
    handlers_.emplace_back();
    return names_.size() - 1;
  }

  /// Adds the two directed links between consecutive nodes a and a+1.
  void connect(NodeId a, NodeId b, std::uint64_t bandwidth, SimTime delay, std::size_t capacity) {
    if (b != a + 1) throw InvalidConfig("chain topology links must join consecutive nodes");
    links_.emplace_back(*sim_, names_[a] + "->" + names_[b], a, b, bandwidth, delay, capacity);
    forward_[a] = links_.size() - 1;
    links_.emplace_back(*sim_, names_[b] + "->" + names_[a], b, a, bandwidth, delay, capacity);
    backward_[b] = links_.size() - 1;
  }

  /// Must be called once all links exist (link storage is then stable).
  void finalize() {
    for (auto& l : links_) {
      const NodeId dst = l.to();
      l.set_receiver([this, dst](const Packet& p) { arrive(dst, p); });
    }
  }

  void set_host_handler(NodeId n, HostHandler h) { handlers_[n] = std::move(h); }

  /// Injects a packet originated by host `n`.
  void send_from(NodeId n, const Packet& p) {
    ++sim_->stats().packets_sent;
    forward(n, p);
  }

  std::size_t node_count() const { return names_.size(); }
  const std::string& node_name(NodeId n) const { return names_[n]; }
  std::deque<Link>& links() { return links_; }
  const std::deque<Link>& links() const { return links_; }
  const Link& link(std::string_view name) const {
    for (const auto& l : links_)
      if (l.name() == name) return l;
    throw std::out_of_range("no link " + std::string(name));
  }

  std::uint64_t packets_in_flight() const {
    std::uint64_t n = 0;
    for (const auto& l : links_) n += l.packets_held();
    return n;
  }

  std::uint64_t total_drops() const {
    std::uint64_t n = 0;
    for (const auto& l : links_) n += l.drops();
    return n;
  }

 private:
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  void forward(NodeId n, const Packet& p) {
    const std::size_t li = p.is_ack ? backward_[n] : forward_[n];
    if (li == kNone) throw std::logic_error("no route from " + names_[n]);
    links_[li].enqueue(p);
  }

  void arrive(NodeId n, const Packet& p) {
    const bool at_destination = p.is_ack ? n == 0 : n + 1 == names_.size();
    if (at_destination) {
      ++sim_->stats().packets_delivered;
      if (handlers_[n]) handlers_[n](p);
      return;
    }
    forward(n, p);
  }

  Simulator* sim_;
  std::vector<std::string> names_;
  std::vector<std::size_t> forward_;
  std::vector<std::size_t> backward_;
  std::vector<HostHandler> handlers_;
  std::deque<Link> links_;
};

struct DumbbellNodes {
  NodeId source = 0;
  NodeId router0 = 1;
  NodeId router1 = 2;
  NodeId sink = 3;
};

/// source <-> router-0 and router-1 <-> sink at the access rate,
/// router-0 <-> router-1 at the bottleneck rate.
inline DumbbellNodes build_dumbbell(Topology& topo, const DumbbellConfig& cfg) {
  cfg.validate();
  if (topo.node_count() != 0) throw InvalidConfig("topology already populated");
  DumbbellNodes n;
  n.source = topo.add_node("source");
  n.router0 = topo.add_node("router-0");
  n.router1 = topo.add_node("router-1");
  n.sink = topo.add_node("sink");
  topo.connect(n.source, n.router0, cfg.access_bandwidth, cfg.access_prop_delay, cfg.queue_capacity);
  topo.connect(n.router0, n.router1, cfg.bottleneck_bandwidth, cfg.bottleneck_prop_delay,
               cfg.queue_capacity);
  topo.connect(n.router1, n.sink, cfg.access_bandwidth, cfg.access_prop_delay, cfg.queue_capacity);
  topo.finalize();
  return n;
}

/// One-way delay of a packet of `wire_bytes` across an idle dumbbell.
constexpr SimTime idle_path_delay(const DumbbellConfig& cfg, std::uint64_t wire_bytes) {
  return cfg.access_prop_delay + cfg.access_prop_delay + cfg.bottleneck_prop_delay +
         serialization(wire_bytes, cfg.access_bandwidth) +
         serialization(wire_bytes, cfg.access_bandwidth) +
         serialization(wire_bytes, cfg.bottleneck_bandwidth);
}

/// Data one way plus a header-only ACK back, with no queueing.
constexpr SimTime base_rtt(const DumbbellConfig& cfg, std::uint32_t mss = kDefaultMss) {
  return idle_path_delay(cfg, mss + kHeaderBytes) + idle_path_delay(cfg, kHeaderBytes);
}

}  // namespace cwndlab
