// Acceptance gate: prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails.
//
// usage: acceptance [WORK_DIR]

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cwndlab/dqn.hpp"
#include "cwndlab/experiment.hpp"
#include "cwndlab/metrics.hpp"
#include "cwndlab/rlenv.hpp"
#include "cwndlab/session.hpp"

namespace fs = std::filesystem;
using namespace cwndlab;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CWNDLAB_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::map<std::string, std::string> read_kv(const fs::path& p) {
  std::map<std::string, std::string> kv;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line))
    if (auto eq = line.find('='); eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  return kv;
}

// Relative paths of every regular file under `root`.
std::vector<fs::path> files_under(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root));
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------

Outcome newreno_conformance() {
  const auto t0 = Clock::now();
  DumbbellConfig cfg;
  cfg.queue_capacity = 1'000'000;
  FlowSession s(cfg, std::make_unique<NewReno>());
  const std::uint64_t mss = kDefaultMss, iw = 2 * mss;
  std::uint64_t mark = 0, round = 0, prev = 0, ss = 0, ca = 0, bad = 0;
  bool marked = false;
  s.set_event_hook([&](const ConnectionState& st, SimTime) {
    if (!marked) {
      marked = true;
      mark = st.snd_nxt;
      prev = st.cwnd;
      bad += st.cwnd != iw;
      return;
    }
    if (st.snd_una < mark) return;
    ++round;
    if (prev < st.ssthresh) {
      const std::uint64_t want = std::min<std::uint64_t>(iw << std::min<std::uint64_t>(round, 40), st.ssthresh);
      const std::uint64_t diff = st.cwnd > want ? st.cwnd - want : want - st.cwnd;
      bad += diff > mss;
      ++ss;
    } else {
      bad += st.cwnd < prev || st.cwnd - prev > mss;
      ++ca;
    }
    prev = st.cwnd;
    mark = st.snd_nxt;
  });
  s.run_until(SimTime::seconds(10));
  const double dt = seconds_since(t0);
  const bool ok = bad == 0 && ss >= 4 && ca >= 5 && s.topology().total_drops() == 0 && dt < 1.0;
  return {ok, "slow-start rounds=" + std::to_string(ss) + " avoidance rounds=" + std::to_string(ca) +
                  " violations=" + std::to_string(bad) + " runtime_s=" + num(dt, 3)};
}

Outcome bottleneck_saturation() {
  const auto t0 = Clock::now();
  DumbbellConfig cfg;
  FlowSession s(cfg, std::make_unique<NewReno>());
  s.run_until(cfg.duration);
  const double dt = seconds_since(t0);
  const double mbps = static_cast<double>(s.delivered_bytes()) * 8.0 / cfg.duration.as_seconds() / 1e6;
  const double share = mbps / 2.0;
  return {share >= 0.85 && dt < 1.0,
          "payload_mbps=" + num(mbps) + " share=" + num(100 * share, 2) + "% runtime_s=" + num(dt, 3)};
}

Outcome delay_model() {
  DumbbellConfig cfg;
  Simulator sim;
  Topology topo(sim);
  const auto n = build_dumbbell(topo, cfg);
  SimTime at{};
  topo.set_host_handler(n.sink, [&](const Packet&) { at = sim.now(); });
  Packet p;
  p.payload_size = 1500 - kHeaderBytes;
  topo.send_from(n.source, p);
  sim.run_until(SimTime::seconds(1));
  // 2 + 10 + 2 ms propagation; 1500 B at 10, 2, 10 Mbps = 1200 + 6000 + 1200 us
  const std::uint64_t want = 2000 + 10000 + 2000 + 1200 + 6000 + 1200;
  return {at.ticks == want, "arrival_us=" + std::to_string(at.ticks) + " expected_us=" + std::to_string(want)};
}

Outcome gradient_check() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst = 0;
  int nets = 0;
  const std::vector<std::vector<std::size_t>> shapes = {{4, 64, 64, 3}, {4, 12, 3}, {4, 9, 7, 3}};
  for (; nets < 12; ++nets) {
    auto net = QNetwork::glorot(shapes[nets % shapes.size()], rng);
    for (auto& l : net.layers())
      for (auto& b : l.biases) b = rng.uniform(-0.5, 0.5);
    std::vector<Transition> batch(1 + rng.below(12));
    std::vector<double> y;
    for (auto& t : batch) {
      for (auto& v : t.state) v = rng.uniform(-2, 2);
      t.action = static_cast<int>(rng.below(3));
      y.push_back(rng.uniform(-3, 3));
    }
    QNetwork grad;
    td_loss_and_gradient(net, batch, y, 0.0, grad);
    std::vector<double*> p, g;
    net.for_each_parameter([&](double& v) { p.push_back(&v); });
    grad.for_each_parameter([&](double& v) { g.push_back(&v); });
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double keep = *p[i], h = 1e-5;
      *p[i] = keep + h;
      const double up = td_loss(net, batch, y);
      *p[i] = keep - h;
      const double down = td_loss(net, batch, y);
      *p[i] = keep;
      const double fd = (up - down) / (2 * h);
      const double scale = std::max(std::abs(fd), std::abs(*g[i]));
      if (scale > 1e-9) worst = std::max(worst, std::abs(fd - *g[i]) / scale);
    }
  }
  const double dt = seconds_since(t0);
  return {worst <= 1e-4 && nets >= 10 && dt < 5.0,
          "nets=" + std::to_string(nets) + " max_rel_err=" + std::to_string(worst) +
              " runtime_s=" + num(dt, 3)};
}

class ParityEnv {
 public:
  StateVector reset(std::uint64_t seed) {
    rng_ = Rng(seed);
    t_ = 0;
    s_ = static_cast<int>(rng_.below(2));
    return encode(s_);
  }
  Feedback step(int a) {
    const double r = a % 2 == s_ ? 1.0 : 0.0;
    visits.push_back({s_, a, r});
    s_ = static_cast<int>(rng_.below(2));
    return {encode(s_), r, ++t_ >= 50};
  }
  static StateVector encode(int s) { return {s == 0 ? 1.0 : 0.0, s == 1 ? 1.0 : 0.0, 0, 0}; }
  struct Visit {
    int s, a;
    double r;
  };
  std::vector<Visit> visits;

 private:
  Rng rng_;
  int s_ = 0;
  std::uint64_t t_ = 0;
};

Outcome parity_mdp() {
  const auto t0 = Clock::now();
  TrainConfig cfg;
  cfg.gamma = 0.0;
  cfg.episodes = 100;  // 5000 steps
  ParityEnv env;
  const auto r = train(env, cfg);
  std::array<std::array<double, 3>, 2> q{};
  for (const auto& v : env.visits) q[v.s][v.a] += 0.1 * (v.r - q[v.s][v.a]);
  std::size_t optimal = 0, agree = 0;
  for (const auto& v : env.visits) {
    const int a = argmax(forward(r.policy, ParityEnv::encode(v.s)));
    int tab = 0;
    for (int k = 1; k < 3; ++k)
      if (q[v.s][k] > q[v.s][tab]) tab = k;
    optimal += a % 2 == v.s;
    agree += (tab % 2) == (a % 2);
  }
  const double n = static_cast<double>(env.visits.size());
  const double dt = seconds_since(t0);
  return {r.total_steps == 5000 && optimal / n >= 0.95 && agree / n >= 0.95 && dt < 10.0,
          "steps=" + std::to_string(r.total_steps) + " optimal=" + num(100 * optimal / n, 2) +
              "% agree_with_tabular=" + num(100 * agree / n, 2) + "% runtime_s=" + num(dt, 3)};
}

// Headline run artifacts shared by the remaining criteria.
struct Experiment {
  fs::path train_a, train_b, cmp_a, cmp_b;
  bool train_ok = false, compare_ok = false;
  double train_seconds = 0;
};

Experiment run_experiment(const fs::path& work) {
  Experiment e;
  e.train_a = work / "train_a";
  e.train_b = work / "train_b";
  e.cmp_a = work / "compare_a";
  e.cmp_b = work / "compare_b";
  for (const auto& d : {e.train_a, e.train_b, e.cmp_a, e.cmp_b}) fs::remove_all(d);
  auto t0 = Clock::now();
  e.train_ok = run_cli("train --seed 1 --episodes 300 --out " + e.train_a.string()) == 0;
  e.train_seconds = seconds_since(t0);
  e.train_ok = e.train_ok && run_cli("train --seed 1 --episodes 300 --out " + e.train_b.string()) == 0;
  const std::string seeds = " --seed 1 --seed 2 --seed 3 --seed 4 --seed 5";
  e.compare_ok =
      e.train_ok &&
      run_cli("compare --policy " + (e.train_a / "policy.bin").string() + seeds + " --out " + e.cmp_a.string()) == 0 &&
      run_cli("compare --policy " + (e.train_a / "policy.bin").string() + seeds + " --out " + e.cmp_b.string()) == 0;
  return e;
}

Outcome determinism(const Experiment& e) {
  if (!e.compare_ok) return {false, "train/compare did not complete"};
  std::size_t compared = 0, differing = 0;
  auto check = [&](const fs::path& a, const fs::path& b) {
    const auto fa = files_under(a), fb = files_under(b);
    if (fa != fb) {
      ++differing;
      return;
    }
    for (const auto& f : fa) {
      if (f.filename() == "manifest.cfg") continue;  // records the output directory
      ++compared;
      differing += slurp(a / f) != slurp(b / f);
    }
  };
  check(e.train_a, e.train_b);
  check(e.cmp_a, e.cmp_b);
  return {differing == 0 && compared > 0,
          "files_compared=" + std::to_string(compared) + " differing=" + std::to_string(differing)};
}

Outcome headline(const Experiment& e) {
  if (!e.compare_ok) return {false, "train/compare did not complete"};
  auto kv = read_kv(e.cmp_a / "summary.kv");
  const double rl_l = std::stod(kv.at("rl.mean_latency_ms"));
  const double nr_l = std::stod(kv.at("baseline.mean_latency_ms"));
  const double rl_t = std::stod(kv.at("rl.mean_throughput_mbps"));
  const double nr_t = std::stod(kv.at("baseline.mean_throughput_mbps"));
  bool rows = true;
  for (int s = 1; s <= 5; ++s)
    for (const char* p : {"rl", "baseline"})
      rows = rows && kv.count(std::string(p) + ".seed" + std::to_string(s) + ".latency_ms") &&
             kv.count(std::string(p) + ".seed" + std::to_string(s) + ".throughput_mbps");
  const bool lat_ok = rl_l <= 0.9 * nr_l;
  const bool thr_ok = rl_t >= 0.9 * nr_t;
  const bool time_ok = e.train_seconds <= 15 * 60;
  return {lat_ok && thr_ok && rows && time_ok,
          "rl_latency_ms=" + num(rl_l, 3) + " newreno_latency_ms=" + num(nr_l, 3) +
              " (-" + num(100 * (nr_l - rl_l) / nr_l, 2) + "%) rl_mbps=" + num(rl_t) +
              " newreno_mbps=" + num(nr_t) + " (" + num(100 * rl_t / nr_t, 2) +
              "% of newreno) train_s=" + num(e.train_seconds, 1)};
}

Outcome reward_trace(const Experiment& e) {
  if (!e.train_ok) return {false, "training did not complete"};
  const auto series = read_csv(e.train_a / "reward.csv");
  if (series.size() != 1 || series[0].size() < 100) return {false, "reward.csv too short"};
  std::vector<double> r;
  for (const auto& [t, v] : series[0].samples()) r.push_back(v);
  bool finite = true;
  for (double v : r) finite = finite && std::isfinite(v);
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    first += r[i] / 50;
    last += r[r.size() - 50 + i] / 50;
  }
  return {finite && last > first, "episodes=" + std::to_string(r.size()) + " first50_mean=" + num(first, 2) +
                                      " last50_mean=" + num(last, 2)};
}

Outcome byte_conservation(const Experiment& e) {
  if (!e.compare_ok) return {false, "compare did not complete"};
  const auto kv = read_kv(e.cmp_a / "summary.kv");
  std::size_t runs = 0, mismatched = 0;
  for (const auto& [dir, prefix] : {std::pair{"rl", "rl"}, std::pair{"newreno", "baseline"}}) {
    for (int s = 1; s <= 5; ++s) {
      std::ifstream is(e.cmp_a / dir / ("seed_" + std::to_string(s)) / "throughput.csv");
      std::string line;
      std::getline(is, line);
      std::uint64_t prev = 0, bytes = 0;
      while (std::getline(is, line)) {
        const auto comma = line.find(',');
        const std::uint64_t t = std::stoull(line.substr(0, comma));
        const double mbps = std::stod(line.substr(comma + 1));
        bytes += static_cast<std::uint64_t>(std::llround(mbps * static_cast<double>(t - prev) / 8.0));
        prev = t;
      }
      const auto want = std::stoull(kv.at(std::string(prefix) + ".seed" + std::to_string(s) + ".delivered_bytes"));
      ++runs;
      mismatched += bytes != want;
    }
  }
  return {runs == 10 && mismatched == 0,
          "runs=" + std::to_string(runs) + " mismatched=" + std::to_string(mismatched)};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "cwndlab_acceptance";
  fs::create_directories(work);

  int failures = 0;
  auto report = [&](const char* name, const Outcome& o) {
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  };
  report("newreno-conformance", newreno_conformance());
  report("bottleneck-saturation", bottleneck_saturation());
  report("delay-model-exactness", delay_model());
  report("gradient-check", gradient_check());
  report("dqn-parity-mdp", parity_mdp());
  const auto e = run_experiment(work);
  report("determinism", determinism(e));
  report("headline-directional", headline(e));
  report("reward-trace", reward_trace(e));
  report("byte-conservation", byte_conservation(e));
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
