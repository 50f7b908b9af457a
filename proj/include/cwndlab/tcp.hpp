#pragma once

// Sender and receiver halves of a bulk-transfer TCP connection.
//
// The sender is a pure state machine: every entry point returns the packets
// to put on the wire and what to do with the retransmission timer, and the
// caller (FlowSession) wires those into the event loop.  Window policy lives
// behind CongestionControl; loss detection, fast retransmit and New Reno
// partial-ACK recovery are transport mechanics and live here.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cwndlab/simnet.hpp"

namespace cwndlab {

class AckBeyondSent : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class WindowViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline constexpr std::uint64_t kInitialSsthresh = 65535;
inline constexpr SimTime kRtoFloor = SimTime::millis(200);
inline constexpr SimTime kRtoCeiling = SimTime::seconds(60);
inline constexpr SimTime kInitialRto = SimTime::seconds(1);

struct ConnectionState {
  std::uint64_t cwnd = 2ULL * kDefaultMss;
  std::uint64_t ssthresh = kInitialSsthresh;
  std::uint32_t mss = kDefaultMss;
  std::uint64_t snd_nxt = 0;
  std::uint64_t snd_una = 0;
  // Highest sequence ever sent; differs from snd_nxt after a timeout rewinds
  // transmission back to snd_una.
  std::uint64_t snd_max = 0;
  std::uint32_t dup_ack_count = 0;
  SimTime srtt{};
  SimTime rttvar{};
  SimTime rto = kInitialRto;
  bool in_fast_recovery = false;
  std::uint64_t recover_point = 0;

  std::uint64_t bytes_in_flight() const { return snd_nxt - snd_una; }

  static ConnectionState initial(std::uint32_t mss = kDefaultMss) {
    ConnectionState s;
    s.mss = mss;
    s.cwnd = 2ULL * mss;
    return s;
  }
};

/// Window policy plugged into the transport.  Implementations only touch
/// cwnd and ssthresh.
class CongestionControl {
 public:
  virtual ~CongestionControl() = default;
  virtual std::string_view name() const = 0;
  virtual void increase_window(ConnectionState& state, std::uint32_t segments_acked) = 0;
  virtual std::uint64_t get_ssthresh(const ConnectionState& state,
                                     std::uint64_t bytes_in_flight) = 0;
  virtual void on_rtt_sample(ConnectionState& /*state*/, SimTime /*rtt*/) {}
};

/// Slow start below ssthresh (+1 MSS per acked segment), then congestion
/// avoidance (+mss*mss/cwnd per acked segment, at least one byte).
inline void newreno_increase_window(ConnectionState& s, std::uint32_t segments_acked) {
  for (std::uint32_t i = 0; i < segments_acked; ++i) {
    if (s.cwnd < s.ssthresh) {
      s.cwnd += s.mss;
    } else {
      const std::uint64_t mss = s.mss;
      s.cwnd += std::max<std::uint64_t>(1, mss * mss / s.cwnd);
    }
  }
}

inline std::uint64_t newreno_get_ssthresh(const ConnectionState& s, std::uint64_t bytes_in_flight) {
  return std::max<std::uint64_t>(bytes_in_flight / 2, 2ULL * s.mss);
}

class NewReno final : public CongestionControl {
 public:
  std::string_view name() const override { return "newreno"; }
  void increase_window(ConnectionState& s, std::uint32_t segments_acked) override {
    newreno_increase_window(s, segments_acked);
  }
  std::uint64_t get_ssthresh(const ConnectionState& s, std::uint64_t bytes_in_flight) override {
    return newreno_get_ssthresh(s, bytes_in_flight);
  }
};

/// Smoothed RTT / RTO estimator with the usual 1/8 and 1/4 gains.
class RttEstimator {
 public:
  void sample(SimTime r) {
    const std::int64_t rv = static_cast<std::int64_t>(r.ticks);
    if (!has_sample_) {
      srtt_ = rv;
      rttvar_ = rv / 2;
      has_sample_ = true;
    } else {
      const std::int64_t err = srtt_ > rv ? srtt_ - rv : rv - srtt_;
      rttvar_ = (3 * rttvar_ + err + 2) / 4;
      srtt_ = (7 * srtt_ + rv + 4) / 8;
    }
    backoff_ = 0;
    update_rto();
  }

  /// Doubles the timeout after an expiry, up to the ceiling.
  void backoff() {
    ++backoff_;
    rto_ = std::min(kRtoCeiling.ticks, rto_ * 2);
  }

  bool has_sample() const { return has_sample_; }
  SimTime srtt() const { return SimTime{static_cast<std::uint64_t>(srtt_)}; }
  SimTime rttvar() const { return SimTime{static_cast<std::uint64_t>(rttvar_)}; }
  SimTime rto() const { return SimTime{rto_}; }
  unsigned backoff_count() const { return backoff_; }

 private:
  void update_rto() {
    const std::uint64_t raw = static_cast<std::uint64_t>(srtt_ + 4 * rttvar_);
    rto_ = std::clamp(raw, kRtoFloor.ticks, kRtoCeiling.ticks);
  }

  bool has_sample_ = false;
  std::int64_t srtt_ = 0;
  std::int64_t rttvar_ = 0;
  std::uint64_t rto_ = kInitialRto.ticks;
  unsigned backoff_ = 0;
};

enum class TimerOp { None, Restart, Stop };

struct TransportActions {
  std::vector<Packet> packets;
  TimerOp timer = TimerOp::None;
  bool loss_detected = false;
  std::uint32_t segments_acked = 0;
  std::optional<SimTime> rtt_sample;
};

/// Bulk-data sender.  `app_limit` caps the total bytes the application
/// offers; unset means an infinite backlog.
class TcpSender {
 public:
  explicit TcpSender(std::unique_ptr<CongestionControl> cc, std::uint32_t mss = kDefaultMss,
                     std::optional<std::uint64_t> app_limit = std::nullopt,
                     std::uint32_t flow_id = 0)
      : cc_(std::move(cc)), state_(ConnectionState::initial(mss)), app_limit_(app_limit),
        flow_id_(flow_id) {
    if (!cc_) throw std::invalid_argument("congestion control must not be null");
    if (mss == 0) throw std::invalid_argument("mss must be > 0");
  }

  const ConnectionState& state() const { return state_; }
  /// Direct window access for controllers acting between events.
  ConnectionState& mutable_state() { return state_; }
  CongestionControl& congestion_control() { return *cc_; }
  const RttEstimator& rtt() const { return rtt_; }
  bool timer_running() const { return timer_running_; }
  std::uint64_t recovery_inflation() const { return inflation_; }
  /// Window used for transmission decisions (cwnd plus dup-ACK inflation
  /// while in fast recovery).
  std::uint64_t send_window() const { return state_.cwnd + inflation_; }
  std::uint64_t retransmitted_segments() const { return retransmits_; }

  /// Emits new segments while one more full segment fits in the window.
  TransportActions try_send(SimTime now) {
    TransportActions out;
    send_new_data(now, out);
    return out;
  }

  TransportActions on_ack_received(std::uint64_t ack_seq, SimTime now) {
    TransportActions out;
    auto& s = state_;
    if (ack_seq > s.snd_max) {
      throw AckBeyondSent("ack " + std::to_string(ack_seq) + " beyond highest sent " +
                          std::to_string(s.snd_max));
    }
    if (ack_seq < s.snd_una) return out;

    if (ack_seq == s.snd_una) {
      if (s.snd_max == s.snd_una) return out;
      on_duplicate_ack(now, out);
      return out;
    }

    const std::uint64_t acked = ack_seq - s.snd_una;
    out.segments_acked = static_cast<std::uint32_t>(acked / s.mss);
    out.rtt_sample = take_rtt_sample(ack_seq, now);
    s.snd_una = ack_seq;
    if (s.snd_nxt < s.snd_una) s.snd_nxt = s.snd_una;
    if (out.rtt_sample) {
      rtt_.sample(*out.rtt_sample);
      sync_rtt();
      cc_->on_rtt_sample(s, *out.rtt_sample);
    }

    if (s.in_fast_recovery) {
      if (ack_seq >= s.recover_point) {
        s.in_fast_recovery = false;
        inflation_ = 0;
        s.dup_ack_count = 0;
      } else {
        // partial ACK: repair the next hole and deflate
        inflation_ = inflation_ > acked ? inflation_ - acked : 0;
        if (acked >= s.mss) inflation_ += s.mss;
        s.dup_ack_count = 0;
        retransmit_head(now, out);
      }
    } else {
      s.dup_ack_count = 0;
      if (out.segments_acked > 0) cc_->increase_window(s, out.segments_acked);
    }
    enforce_floors();

    out.timer = s.snd_max > s.snd_una ? TimerOp::Restart : TimerOp::Stop;
    timer_running_ = out.timer == TimerOp::Restart;
    send_new_data(now, out);
    return out;
  }

  TransportActions on_timeout(SimTime now) {
    TransportActions out;
    auto& s = state_;
    if (s.snd_max == s.snd_una) {
      out.timer = TimerOp::Stop;
      timer_running_ = false;
      return out;
    }
    out.loss_detected = true;
    s.ssthresh = std::max<std::uint64_t>(cc_->get_ssthresh(s, s.bytes_in_flight()), 2ULL * s.mss);
    s.cwnd = s.mss;
    s.in_fast_recovery = false;
    inflation_ = 0;
    s.dup_ack_count = 0;
    s.recover_point = s.snd_max;
    have_recovered_ = true;
    s.snd_nxt = s.snd_una;
    rtt_.backoff();
    s.rto = rtt_.rto();
    send_new_data(now, out);
    out.timer = TimerOp::Restart;
    timer_running_ = true;
    return out;
  }

  /// Throws WindowViolation if a structural invariant is broken.
  void check_invariants() const {
    const auto& s = state_;
    if (s.cwnd < s.mss) throw WindowViolation("cwnd below one segment");
    if (s.ssthresh < 2ULL * s.mss) throw WindowViolation("ssthresh below two segments");
    if (!(s.snd_una <= s.snd_nxt && s.snd_nxt <= s.snd_max))
      throw WindowViolation("sequence ordering broken");
  }

 private:
  struct SegmentRecord {
    std::uint64_t seq;
    std::uint32_t len;
    SimTime sent_at;
    bool retransmitted;
  };

  Packet make_segment(std::uint64_t seq, std::uint32_t len, SimTime now) const {
    Packet p;
    p.flow_id = flow_id_;
    p.seq = seq;
    p.payload_size = len;
    p.sent_at = now;
    return p;
  }

  std::uint64_t app_end() const {
    return app_limit_ ? *app_limit_ : std::numeric_limits<std::uint64_t>::max();
  }

  void send_new_data(SimTime now, TransportActions& out) {
    auto& s = state_;
    bool sent = false;
    while (s.snd_nxt < app_end()) {
      const std::uint32_t len =
          static_cast<std::uint32_t>(std::min<std::uint64_t>(s.mss, app_end() - s.snd_nxt));
      if (s.bytes_in_flight() + s.mss > send_window()) break;
      const bool resend = s.snd_nxt < s.snd_max;
      if (resend) {
        mark_resent(s.snd_nxt, now);
      } else {
        records_.push_back({s.snd_nxt, len, now, false});
      }
      out.packets.push_back(make_segment(s.snd_nxt, len, now));
      s.snd_nxt += len;
      s.snd_max = std::max(s.snd_max, s.snd_nxt);
      if (s.bytes_in_flight() > send_window()) throw WindowViolation("sent beyond window");
      sent = true;
    }
    if (sent && !timer_running_) {
      out.timer = TimerOp::Restart;
      timer_running_ = true;
    }
  }

  void mark_resent(std::uint64_t seq, SimTime now) {
    ++retransmits_;
    for (auto& r : records_) {
      if (r.seq == seq) {
        r.retransmitted = true;
        r.sent_at = now;
        return;
      }
    }
  }

  void retransmit_head(SimTime now, TransportActions& out) {
    if (records_.empty()) return;
    const auto& head = records_.front();
    mark_resent(head.seq, now);
    out.packets.push_back(make_segment(head.seq, head.len, now));
  }

  void on_duplicate_ack(SimTime now, TransportActions& out) {
    auto& s = state_;
    ++s.dup_ack_count;
    if (s.in_fast_recovery) {
      inflation_ += s.mss;
      send_new_data(now, out);
      return;
    }
    if (s.dup_ack_count != 3) return;
    // A third duplicate for data already covered by a previous recovery
    // episode does not start a new one.
    if (have_recovered_ && s.snd_una < s.recover_point) return;
    out.loss_detected = true;
    s.ssthresh = std::max<std::uint64_t>(cc_->get_ssthresh(s, s.bytes_in_flight()), 2ULL * s.mss);
    s.cwnd = std::max<std::uint64_t>(std::min(s.cwnd, s.ssthresh), s.mss);
    s.in_fast_recovery = true;
    s.recover_point = s.snd_max;
    have_recovered_ = true;
    inflation_ = 3ULL * s.mss;
    retransmit_head(now, out);
    send_new_data(now, out);
  }

  // RTT of the newest segment covered by this ACK, unless any covered
  // segment was retransmitted (Karn).
  std::optional<SimTime> take_rtt_sample(std::uint64_t ack_seq, SimTime now) {
    std::optional<SimTime> sample;
    bool ambiguous = false;
    while (!records_.empty() && records_.front().seq + records_.front().len <= ack_seq) {
      const auto& r = records_.front();
      ambiguous = ambiguous || r.retransmitted;
      sample = now - r.sent_at;
      records_.pop_front();
    }
    if (ambiguous) return std::nullopt;
    return sample;
  }

  void sync_rtt() {
    state_.srtt = rtt_.srtt();
    state_.rttvar = rtt_.rttvar();
    state_.rto = rtt_.rto();
  }

  void enforce_floors() {
    auto& s = state_;
    if (s.cwnd < s.mss) s.cwnd = s.mss;
    if (s.ssthresh < 2ULL * s.mss) s.ssthresh = 2ULL * s.mss;
  }

  std::unique_ptr<CongestionControl> cc_;
  ConnectionState state_;
  RttEstimator rtt_;
  std::optional<std::uint64_t> app_limit_;
  std::uint32_t flow_id_;
  std::deque<SegmentRecord> records_;
  std::uint64_t inflation_ = 0;
  bool timer_running_ = false;
  bool have_recovered_ = false;
  std::uint64_t retransmits_ = 0;
};

/// Cumulative-ACK receiver that buffers out-of-order segments and ACKs
/// every arriving segment.
class TcpReceiver {
 public:
  /// Processes a data segment and returns the ACK to send back.
  Packet on_data(const Packet& p) {
    if (p.seq == rcv_nxt_) {
      rcv_nxt_ += p.payload_size;
      delivered_ += p.payload_size;
      while (!ooo_.empty() && ooo_.begin()->first <= rcv_nxt_) {
        const auto [seq, len] = *ooo_.begin();
        ooo_.erase(ooo_.begin());
        if (seq + len > rcv_nxt_) {
          delivered_ += seq + len - rcv_nxt_;
          rcv_nxt_ = seq + len;
        }
      }
    } else if (p.seq > rcv_nxt_) {
      ooo_.emplace(p.seq, p.payload_size);
    } else {
      ++duplicates_;
    }
    Packet ack;
    ack.flow_id = p.flow_id;
    ack.is_ack = true;
    ack.ack_seq = rcv_nxt_;
    ack.sent_at = p.sent_at;
    return ack;
  }

  std::uint64_t rcv_nxt() const { return rcv_nxt_; }
  /// In-order payload bytes handed to the application.
  std::uint64_t delivered_bytes() const { return delivered_; }
  std::uint64_t duplicate_segments() const { return duplicates_; }
  std::size_t buffered_segments() const { return ooo_.size(); }

 private:
  std::uint64_t rcv_nxt_ = 0;
  std::uint64_t delivered_ = 0;
  std::uint64_t duplicates_ = 0;
  std::map<std::uint64_t, std::uint32_t> ooo_;
};

}  // namespace cwndlab
