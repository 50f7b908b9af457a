#include <gtest/gtest.h>

#include <algorithm>
#include <cstdint>
#include <memory>
#include <vector>

#include "cwndlab/session.hpp"
#include "cwndlab/tcp.hpp"

using namespace cwndlab;

namespace {

constexpr std::uint64_t kMss = kDefaultMss;

TcpSender make_sender() { return TcpSender(std::make_unique<NewReno>()); }

ConnectionState state_with(std::uint64_t cwnd, std::uint64_t ssthresh) {
  auto s = ConnectionState::initial();
  s.cwnd = cwnd;
  s.ssthresh = ssthresh;
  return s;
}

}  // namespace

TEST(Sender, CumulativeAckCountsSegments) {
  auto tx = make_sender();
  EXPECT_EQ(tx.try_send(SimTime{0}).packets.size(), 2u);
  const auto a = tx.on_ack_received(2920, SimTime{1000});
  EXPECT_EQ(a.segments_acked, 2u);
  EXPECT_EQ(tx.state().snd_una, 2920u);
}

TEST(Sender, ThreeDuplicatesTriggerFastRetransmit) {
  auto tx = make_sender();
  tx.mutable_state().cwnd = 10 * kMss;
  EXPECT_EQ(tx.try_send(SimTime{0}).packets.size(), 10u);
  tx.on_ack_received(kMss, SimTime{100});
  auto d1 = tx.on_ack_received(kMss, SimTime{101});
  auto d2 = tx.on_ack_received(kMss, SimTime{102});
  EXPECT_FALSE(d1.loss_detected);
  EXPECT_FALSE(d2.loss_detected);
  auto d3 = tx.on_ack_received(kMss, SimTime{103});
  EXPECT_EQ(tx.state().dup_ack_count, 3u);
  EXPECT_TRUE(d3.loss_detected);
  EXPECT_TRUE(tx.state().in_fast_recovery);
  ASSERT_FALSE(d3.packets.empty());
  EXPECT_EQ(d3.packets.front().seq, kMss);
  EXPECT_EQ(tx.retransmitted_segments(), 1u);
}

TEST(Sender, AckBeyondHighestSentThrows) {
  auto tx = make_sender();
  tx.try_send(SimTime{0});
  EXPECT_THROW(tx.on_ack_received(2 * kMss + 1, SimTime{1}), AckBeyondSent);
}

TEST(NewRenoWindow, SlowStartAddsOneSegment) {
  auto s = state_with(2920, 65535);
  newreno_increase_window(s, 1);
  EXPECT_EQ(s.cwnd, 4380u);
}

TEST(NewRenoWindow, CongestionAvoidanceIncrement) {
  auto s = state_with(14600, 14600);
  newreno_increase_window(s, 1);
  EXPECT_EQ(s.cwnd, 14746u);
}

TEST(NewRenoWindow, SsthreshHalvesFlightWithFloor) {
  const auto s = ConnectionState::initial();
  EXPECT_EQ(newreno_get_ssthresh(s, 29200), 14600u);
  EXPECT_EQ(newreno_get_ssthresh(s, 1460), 2920u);
  EXPECT_EQ(newreno_get_ssthresh(s, 0), 2920u);
}

TEST(Sender, TimeoutHalvesAndResets) {
  auto tx = make_sender();
  tx.mutable_state().cwnd = 20 * kMss;
  EXPECT_EQ(tx.try_send(SimTime{0}).packets.size(), 20u);
  const auto a = tx.on_timeout(SimTime::seconds(1));
  EXPECT_TRUE(a.loss_detected);
  EXPECT_EQ(tx.state().ssthresh, 10 * kMss);
  EXPECT_EQ(tx.state().cwnd, kMss);
  ASSERT_EQ(a.packets.size(), 1u);
  EXPECT_EQ(a.packets.front().seq, 0u);
}

TEST(Sender, ConsecutiveTimeoutsBackOffExponentially) {
  auto tx = make_sender();
  tx.try_send(SimTime{0});
  const SimTime base = tx.state().rto;
  tx.on_timeout(SimTime::seconds(1));
  EXPECT_EQ(tx.state().rto.ticks, 2 * base.ticks);
  tx.on_timeout(SimTime::seconds(3));
  EXPECT_EQ(tx.state().rto.ticks, 4 * base.ticks);
}

TEST(Sender, TimeoutWithNothingInFlightIsNoop) {
  auto tx = make_sender();
  const auto before = tx.state();
  const auto a = tx.on_timeout(SimTime::seconds(1));
  EXPECT_FALSE(a.loss_detected);
  EXPECT_TRUE(a.packets.empty());
  EXPECT_EQ(a.timer, TimerOp::Stop);
  EXPECT_EQ(tx.state().cwnd, before.cwnd);
  EXPECT_EQ(tx.state().ssthresh, before.ssthresh);
  EXPECT_EQ(tx.state().rto, before.rto);
}

TEST(Sender, TrySendFillsWholeSegmentsOnly) {
  auto tx = make_sender();
  EXPECT_EQ(tx.try_send(SimTime{0}).packets.size(), 2u);
  EXPECT_EQ(tx.try_send(SimTime{0}).packets.size(), 0u);

  auto tx2 = make_sender();
  tx2.mutable_state().cwnd = kMss;
  EXPECT_EQ(tx2.try_send(SimTime{0}).packets.size(), 1u);
  tx2.mutable_state().cwnd = 3650;
  EXPECT_EQ(tx2.try_send(SimTime{0}).packets.size(), 1u);
  EXPECT_EQ(tx2.state().bytes_in_flight(), 2 * kMss);
}

TEST(Sender, AppLimitStopsTransmission) {
  TcpSender tx(std::make_unique<NewReno>(), kMss, 2000);
  const auto a = tx.try_send(SimTime{0});
  ASSERT_EQ(a.packets.size(), 2u);
  EXPECT_EQ(a.packets[1].payload_size, 540u);
  EXPECT_EQ(tx.try_send(SimTime{0}).packets.size(), 0u);
}

TEST(RttEstimator, ConvergesOnConstantRtt) {
  for (std::uint64_t r : {5'000ULL, 36'624ULL, 250'000ULL}) {
    RttEstimator est;
    for (int i = 0; i < 20; ++i) est.sample(SimTime{r});
    const double err = std::abs(static_cast<double>(est.srtt().ticks) - static_cast<double>(r));
    EXPECT_LE(err, 0.01 * static_cast<double>(r));
  }
}

TEST(RttEstimator, ConvergesFromADifferentStart) {
  RttEstimator est;
  est.sample(SimTime{100'000});
  for (int i = 0; i < 60; ++i) est.sample(SimTime{40'000});
  EXPECT_NEAR(static_cast<double>(est.srtt().ticks), 40'000.0, 400.0);
}

TEST(RttEstimator, RtoFloorAndInitial) {
  RttEstimator est;
  EXPECT_EQ(est.rto(), kInitialRto);
  est.sample(SimTime{10'000});
  EXPECT_EQ(est.rto(), kRtoFloor);
  for (int i = 0; i < 40; ++i) est.backoff();
  EXPECT_EQ(est.rto(), kRtoCeiling);
}

TEST(Sender, KarnSkipsRetransmittedSegments) {
  auto tx = make_sender();
  tx.try_send(SimTime{0});
  tx.on_timeout(SimTime::seconds(1));
  const auto a = tx.on_ack_received(kMss, SimTime::seconds(1) + SimTime{30'000});
  EXPECT_FALSE(a.rtt_sample.has_value());
}

// Slow start doubles per round; congestion avoidance adds at most one
// segment per round.  Rounds end when the last byte outstanding at the
// start of the round is acknowledged.
TEST(NewRenoTrace, SlowStartDoublingAndLinearGrowth) {
  DumbbellConfig cfg;
  cfg.queue_capacity = 100'000;
  FlowSession s(cfg, std::make_unique<NewReno>());
  const std::uint64_t iw = 2 * kMss;
  std::uint64_t mark = 0;
  std::uint64_t round = 0;
  std::uint64_t prev_cwnd = 0;
  std::uint64_t ss_rounds = 0, ca_rounds = 0;
  bool marked = false;
  s.set_event_hook([&](const ConnectionState& st, SimTime) {
    ASSERT_LE(st.bytes_in_flight(), st.cwnd);
    if (!marked) {
      mark = st.snd_nxt;
      marked = true;
      prev_cwnd = st.cwnd;
      EXPECT_EQ(st.cwnd, iw);
      return;
    }
    if (st.snd_una < mark) return;
    ++round;
    const bool slow_start = prev_cwnd < st.ssthresh;
    if (slow_start) {
      const std::uint64_t expect = std::min<std::uint64_t>(iw << round, st.ssthresh);
      const auto diff = st.cwnd > expect ? st.cwnd - expect : expect - st.cwnd;
      EXPECT_LE(diff, kMss) << "round " << round;
      ++ss_rounds;
    } else {
      EXPECT_GT(st.cwnd, prev_cwnd) << "round " << round;
      EXPECT_LE(st.cwnd - prev_cwnd, kMss) << "round " << round;
      ++ca_rounds;
    }
    prev_cwnd = st.cwnd;
    mark = st.snd_nxt;
  });
  s.run_until(SimTime::seconds(10));
  EXPECT_EQ(s.topology().total_drops(), 0u);
  EXPECT_GE(ss_rounds, 4u);
  EXPECT_GE(ca_rounds, 5u);
}

// Every loss detection lowers cwnd, or leaves it at the floor the response
// itself imposes.
TEST(NewRenoTrace, LossResponsesNeverIncreaseWindow) {
  for (std::size_t q : {3u, 6u, 12u, 25u}) {
    DumbbellConfig cfg;
    cfg.queue_capacity = q;
    FlowSession s(cfg, std::make_unique<NewReno>());
    std::uint64_t prev_cwnd = s.sender().state().cwnd;
    std::uint64_t prev_losses = 0;
    std::uint64_t losses_seen = 0;
    s.set_event_hook([&](const ConnectionState& st, SimTime) {
      const auto losses = s.totals().loss_events;
      if (losses > prev_losses) {
        ++losses_seen;
        EXPECT_LE(st.cwnd, prev_cwnd);
        if (prev_cwnd > 2 * kMss) {
          EXPECT_LT(st.cwnd, prev_cwnd);
        }
      }
      prev_losses = losses;
      prev_cwnd = st.cwnd;
    });
    s.run_until(SimTime::seconds(10));
    EXPECT_GT(losses_seen, 0u) << "queue " << q;
  }
}

TEST(Reliability, InOrderDeliveryUnderDrops) {
  for (std::size_t q : {1u, 2u, 4u, 9u}) {
    DumbbellConfig cfg;
    cfg.queue_capacity = q;
    const std::uint64_t total = 300'000;
    FlowOptions opts;
    opts.app_limit = total;
    FlowSession s(cfg, std::make_unique<NewReno>(), opts);
    std::uint64_t last_delivered = 0;
    s.set_event_hook([&](const ConnectionState& st, SimTime) {
      const auto& rx = s.receiver();
      // no gaps: the application stream is exactly [0, rcv_nxt)
      ASSERT_EQ(rx.delivered_bytes(), rx.rcv_nxt());
      ASSERT_LE(rx.rcv_nxt(), st.snd_max);
      ASSERT_GE(rx.delivered_bytes(), last_delivered);
      last_delivered = rx.delivered_bytes();
    });
    s.run_until(SimTime::seconds(120));
    EXPECT_GT(s.topology().total_drops(), 0u) << "queue " << q;
    EXPECT_EQ(s.receiver().delivered_bytes(), total) << "queue " << q;
    EXPECT_EQ(s.sender().state().snd_una, total);
  }
}

TEST(Reliability, ReceiverReassemblesOutOfOrder) {
  TcpReceiver rx;
  auto seg = [](std::uint64_t seq) {
    Packet p;
    p.seq = seq;
    p.payload_size = 100;
    return p;
  };
  EXPECT_EQ(rx.on_data(seg(100)).ack_seq, 0u);
  EXPECT_EQ(rx.on_data(seg(300)).ack_seq, 0u);
  EXPECT_EQ(rx.on_data(seg(0)).ack_seq, 200u);
  EXPECT_EQ(rx.on_data(seg(0)).ack_seq, 200u);
  EXPECT_EQ(rx.duplicate_segments(), 1u);
  EXPECT_EQ(rx.on_data(seg(200)).ack_seq, 400u);
  EXPECT_EQ(rx.delivered_bytes(), 400u);
  EXPECT_EQ(rx.buffered_segments(), 0u);
}

TEST(Sender, PartialAckRetransmitsNextHole) {
  auto tx = make_sender();
  tx.mutable_state().cwnd = 10 * kMss;
  tx.try_send(SimTime{0});
  for (int i = 0; i < 3; ++i) tx.on_ack_received(0, SimTime{100 + static_cast<std::uint64_t>(i)});
  ASSERT_TRUE(tx.state().in_fast_recovery);
  const auto recover = tx.state().recover_point;
  const auto a = tx.on_ack_received(2 * kMss, SimTime{200});
  EXPECT_TRUE(tx.state().in_fast_recovery);
  ASSERT_FALSE(a.packets.empty());
  EXPECT_EQ(a.packets.front().seq, 2 * kMss);
  tx.on_ack_received(recover, SimTime{300});
  EXPECT_FALSE(tx.state().in_fast_recovery);
  EXPECT_EQ(tx.recovery_inflation(), 0u);
}
