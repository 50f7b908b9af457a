#pragma once

// Deep Q-Network agent written against plain std::vector storage.
//
// QNetwork is a fully connected net with rectifier hidden layers and a
// linear output per action.  Gradients are computed analytically by
// backpropagation through the taken-action output only.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <concepts>
#include <functional>
#include <iterator>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cwndlab/random.hpp"
#include "cwndlab/rlenv.hpp"

namespace cwndlab {

class BufferTooSmall : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MalformedPolicyFile : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kStateDim = 4;
using QValues = std::array<double, kNumActions>;

struct DenseLayer {
  std::size_t rows = 0;  // outputs
  std::size_t cols = 0;  // inputs
  std::vector<double> weights;  // row-major rows x cols
  std::vector<double> biases;

  DenseLayer() = default;
  DenseLayer(std::size_t out, std::size_t in)
      : rows(out), cols(in), weights(out * in, 0.0), biases(out, 0.0) {}

  double& w(std::size_t r, std::size_t c) { return weights[r * cols + c]; }
  double w(std::size_t r, std::size_t c) const { return weights[r * cols + c]; }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

class QNetwork {
 public:
  QNetwork() = default;

  /// Zero-initialised network with the given layer widths (input first).
  explicit QNetwork(const std::vector<std::size_t>& sizes) {
    if (sizes.size() < 2) throw std::invalid_argument("network needs at least two layer sizes");
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
      if (sizes[i] == 0 || sizes[i + 1] == 0) throw std::invalid_argument("empty layer");
      layers_.emplace_back(sizes[i + 1], sizes[i]);
    }
  }

  /// Weights uniform in +-sqrt(6 / (fan_in + fan_out)); biases zero.
  static QNetwork glorot(const std::vector<std::size_t>& sizes, Rng& rng) {
    QNetwork net(sizes);
    for (auto& l : net.layers_) {
      const double limit = std::sqrt(6.0 / static_cast<double>(l.rows + l.cols));
      for (auto& v : l.weights) v = rng.uniform(-limit, limit);
    }
    return net;
  }

  std::vector<std::size_t> layer_sizes() const {
    std::vector<std::size_t> s;
    if (layers_.empty()) return s;
    s.push_back(layers_.front().cols);
    for (const auto& l : layers_) s.push_back(l.rows);
    return s;
  }

  std::size_t input_size() const { return layers_.empty() ? 0 : layers_.front().cols; }
  std::size_t output_size() const { return layers_.empty() ? 0 : layers_.back().rows; }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weights.size() + l.biases.size();
    return n;
  }

  template <class F>
  void for_each_parameter(F&& f) {
    for (auto& l : layers_) {
      for (auto& v : l.weights) f(v);
      for (auto& v : l.biases) f(v);
    }
  }

  bool all_finite() const {
    for (const auto& l : layers_) {
      for (double v : l.weights)
        if (!std::isfinite(v)) return false;
      for (double v : l.biases)
        if (!std::isfinite(v)) return false;
    }
    return true;
  }

  /// Output-layer values for one input.
  std::vector<double> forward(std::span<const double> x) const {
    if (x.size() != input_size()) throw std::invalid_argument("input width mismatch");
    std::vector<double> a(x.begin(), x.end());
    std::vector<double> z;
    for (std::size_t li = 0; li < layers_.size(); ++li) {
      const auto& l = layers_[li];
      z.assign(l.biases.begin(), l.biases.end());
      for (std::size_t r = 0; r < l.rows; ++r) {
        const double* wr = &l.weights[r * l.cols];
        double acc = 0.0;
        for (std::size_t c = 0; c < l.cols; ++c) acc += wr[c] * a[c];
        z[r] += acc;
      }
      if (li + 1 < layers_.size())
        for (auto& v : z) v = v > 0.0 ? v : 0.0;
      a.swap(z);
    }
    return a;
  }

  friend bool operator==(const QNetwork&, const QNetwork&) = default;

 private:
  std::vector<DenseLayer> layers_;
};

inline QValues forward(const QNetwork& net, const StateVector& s) {
  if (net.output_size() != kNumActions) throw std::invalid_argument("network must have 3 outputs");
  const auto out = net.forward(s);
  return {out[0], out[1], out[2]};
}

/// Index of the largest Q-value; ties go to the lowest index.
inline int argmax(const QValues& q) {
  int best = 0;
  for (int i = 1; i < kNumActions; ++i)
    if (q[i] > q[best]) best = i;
  return best;
}

inline Action greedy_action(const QNetwork& net, const StateVector& s) {
  return action_from_index(argmax(forward(net, s)));
}

/// Epsilon-greedy: uniform action with probability eps, otherwise greedy.
inline Action select_action(const QNetwork& net, const StateVector& s, double eps, Rng& rng) {
  if (rng.uniform01() < eps) return action_from_index(static_cast<int>(rng.below(kNumActions)));
  return greedy_action(net, s);
}

struct Transition {
  StateVector state{};
  int action = 0;
  double reward = 0.0;
  StateVector next_state{};
  bool done = false;
};

/// Fixed-capacity ring of transitions; sampling is uniform with replacement.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("replay capacity must be > 0");
    storage_.reserve(std::min<std::size_t>(capacity, 1 << 16));
  }

  void push(const Transition& t) {
    if (t.action < 0 || t.action >= kNumActions) throw std::out_of_range("transition action");
    if (storage_.size() < capacity_) {
      storage_.push_back(t);
    } else {
      storage_[head_] = t;
    }
    head_ = (head_ + 1) % capacity_;
    ++pushed_;
  }

  std::size_t size() const { return storage_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t total_pushed() const { return pushed_; }

  /// i = 0 is the oldest stored transition.
  const Transition& oldest(std::size_t i) const {
    if (storage_.size() < capacity_) return storage_.at(i);
    return storage_.at((head_ + i) % capacity_);
  }

  std::vector<Transition> sample(std::size_t n, Rng& rng) const {
    if (storage_.empty()) throw BufferTooSmall("sampling from an empty replay buffer");
    std::vector<Transition> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(storage_[rng.below(storage_.size())]);
    return out;
  }

 private:
  std::size_t capacity_;
  std::vector<Transition> storage_;
  std::size_t head_ = 0;
  std::uint64_t pushed_ = 0;
};

struct EpsilonSchedule {
  double eps_start = 1.0;
  double eps_min = 0.05;
  double decay = 0.999;  // multiplicative, per agent step

  double value(std::uint64_t step) const {
    return std::max(eps_min, eps_start * std::pow(decay, static_cast<double>(step)));
  }

  void validate() const {
    if (!(eps_start >= 0.0 && eps_start <= 1.0)) throw InvalidConfig("eps_start must be in [0,1]");
    if (!(eps_min >= 0.0 && eps_min <= eps_start)) throw InvalidConfig("eps_min must be in [0,eps_start]");
    if (!(decay > 0.0 && decay <= 1.0)) throw InvalidConfig("eps_decay must be in (0,1]");
  }
};

struct TrainConfig {
  double gamma = 0.95;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::uint64_t target_sync_interval = 500;
  std::size_t warmup = 1000;
  std::size_t replay_capacity = 50'000;
  std::uint64_t episodes = 300;
  std::uint64_t master_seed = 1;
  EpsilonSchedule epsilon;
  std::vector<std::size_t> hidden = {64, 64};
  double momentum = 0.0;
  /// Huber threshold on the TD error; 0 selects plain squared error.
  double huber_delta = 0.0;
  /// Episodes between greedy checkpoint evaluations (0 keeps the final net).
  std::uint64_t checkpoint_interval = 10;

  void validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidConfig("gamma must be in [0,1)");
    if (!(learning_rate > 0.0)) throw InvalidConfig("learning_rate must be > 0");
    if (batch_size == 0) throw InvalidConfig("batch_size must be > 0");
    if (!(batch_size <= warmup && warmup <= replay_capacity))
      throw InvalidConfig("require batch_size <= warmup <= replay_capacity");
    if (target_sync_interval == 0) throw InvalidConfig("target_sync_interval must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidConfig("momentum must be in [0,1)");
    if (!(huber_delta >= 0.0)) throw InvalidConfig("huber_delta must be >= 0");
    for (auto h : hidden)
      if (h == 0) throw InvalidConfig("hidden layer width must be > 0");
    epsilon.validate();
  }

  std::vector<std::size_t> layer_sizes() const {
    std::vector<std::size_t> s{kStateDim};
    s.insert(s.end(), hidden.begin(), hidden.end());
    s.push_back(kNumActions);
    return s;
  }
};

/// Bellman targets: r if terminal, else r + gamma * max_a Q_target(s', a).
inline std::vector<double> td_targets(const QNetwork& target_net, std::span<const Transition> batch,
                                      double gamma) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  std::vector<double> y;
  y.reserve(batch.size());
  for (const auto& t : batch) {
    if (t.done) {
      y.push_back(t.reward);
    } else {
      const auto q = forward(target_net, t.next_state);
      y.push_back(t.reward + gamma * *std::max_element(q.begin(), q.end()));
    }
  }
  return y;
}

/// Mean TD loss over the batch and its gradient with respect to every
/// parameter of `net` (written into `grad`, which takes net's shape).
inline double td_loss_and_gradient(const QNetwork& net, std::span<const Transition> batch,
                                   std::span<const double> targets, double huber_delta,
                                   QNetwork& grad) {
  if (batch.size() != targets.size()) throw std::invalid_argument("targets/batch size mismatch");
  grad = QNetwork(net.layer_sizes());
  const auto& layers = net.layers();
  const std::size_t depth = layers.size();
  const double n = static_cast<double>(batch.size());
  double loss = 0.0;

  std::vector<std::vector<double>> acts(depth + 1);  // post-activation, acts[0] = input
  std::vector<double> delta, prev;
  for (std::size_t bi = 0; bi < batch.size(); ++bi) {
    const auto& t = batch[bi];
    acts[0].assign(t.state.begin(), t.state.end());
    for (std::size_t li = 0; li < depth; ++li) {
      const auto& l = layers[li];
      auto& out = acts[li + 1];
      out.assign(l.biases.begin(), l.biases.end());
      const auto& in = acts[li];
      for (std::size_t r = 0; r < l.rows; ++r) {
        const double* wr = &l.weights[r * l.cols];
        double acc = 0.0;
        for (std::size_t c = 0; c < l.cols; ++c) acc += wr[c] * in[c];
        out[r] += acc;
      }
      if (li + 1 < depth)
        for (auto& v : out) v = v > 0.0 ? v : 0.0;
    }
    const double q = acts[depth][static_cast<std::size_t>(t.action)];
    const double err = q - targets[bi];
    double dq;
    if (huber_delta > 0.0 && std::abs(err) > huber_delta) {
      loss += huber_delta * (std::abs(err) - 0.5 * huber_delta);
      dq = huber_delta * (err > 0 ? 1.0 : -1.0) / n;
    } else if (huber_delta > 0.0) {
      loss += 0.5 * err * err;
      dq = err / n;
    } else {
      loss += err * err;
      dq = 2.0 * err / n;
    }

    delta.assign(layers.back().rows, 0.0);
    delta[static_cast<std::size_t>(t.action)] = dq;
    for (std::size_t li = depth; li-- > 0;) {
      const auto& l = layers[li];
      auto& g = grad.layers()[li];
      const auto& in = acts[li];
      for (std::size_t r = 0; r < l.rows; ++r) {
        const double d = delta[r];
        if (d == 0.0) continue;
        g.biases[r] += d;
        double* gr = &g.weights[r * l.cols];
        for (std::size_t c = 0; c < l.cols; ++c) gr[c] += d * in[c];
      }
      if (li == 0) break;
      prev.assign(l.cols, 0.0);
      for (std::size_t r = 0; r < l.rows; ++r) {
        const double d = delta[r];
        if (d == 0.0) continue;
        const double* wr = &l.weights[r * l.cols];
        for (std::size_t c = 0; c < l.cols; ++c) prev[c] += wr[c] * d;
      }
      // rectifier derivative; acts[li] is post-activation of layer li-1
      for (std::size_t c = 0; c < l.cols; ++c)
        if (!(in[c] > 0.0)) prev[c] = 0.0;
      delta.swap(prev);
    }
  }
  return loss / n;
}

/// Loss only (no gradient), same definition as td_loss_and_gradient.
inline double td_loss(const QNetwork& net, std::span<const Transition> batch,
                      std::span<const double> targets, double huber_delta = 0.0) {
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double err = forward(net, batch[i].state)[static_cast<std::size_t>(batch[i].action)] -
                       targets[i];
    if (huber_delta > 0.0) {
      loss += std::abs(err) <= huber_delta ? 0.5 * err * err
                                           : huber_delta * (std::abs(err) - 0.5 * huber_delta);
    } else {
      loss += err * err;
    }
  }
  return loss / static_cast<double>(batch.size());
}

/// Gradient descent with optional classical momentum.
class SgdOptimizer {
 public:
  SgdOptimizer(double learning_rate, double momentum = 0.0) : lr_(learning_rate), mu_(momentum) {}

  void step(QNetwork& net, const QNetwork& grad) {
    auto& pl = net.layers();
    const auto& gl = grad.layers();
    if (mu_ > 0.0 && velocity_.layers().size() != pl.size()) velocity_ = QNetwork(net.layer_sizes());
    for (std::size_t li = 0; li < pl.size(); ++li) {
      update(pl[li].weights, gl[li].weights, li, true);
      update(pl[li].biases, gl[li].biases, li, false);
    }
  }

 private:
  void update(std::vector<double>& p, const std::vector<double>& g, std::size_t li, bool weights) {
    if (mu_ == 0.0) {
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr_ * g[i];
      return;
    }
    auto& v = weights ? velocity_.layers()[li].weights : velocity_.layers()[li].biases;
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = mu_ * v[i] - lr_ * g[i];
      p[i] += v[i];
    }
  }

  double lr_;
  double mu_;
  QNetwork velocity_;
};

/// One minibatch update of `net` towards targets from `target_net`.
inline double train_step(QNetwork& net, const QNetwork& target_net, const ReplayBuffer& buf,
                         const TrainConfig& cfg, Rng& rng, SgdOptimizer& opt) {
  if (buf.size() < cfg.warmup || buf.size() < cfg.batch_size) {
    throw BufferTooSmall("replay buffer holds " + std::to_string(buf.size()) +
                         " transitions, need " + std::to_string(std::max(cfg.warmup, cfg.batch_size)));
  }
  const auto batch = buf.sample(cfg.batch_size, rng);
  const auto y = td_targets(target_net, batch, cfg.gamma);
  QNetwork grad;
  const double loss = td_loss_and_gradient(net, batch, y, cfg.huber_delta, grad);
  opt.step(net, grad);
  if (!std::isfinite(loss) || !net.all_finite()) throw NumericalError("non-finite loss or parameters");
  return loss;
}

inline void sync_target(const QNetwork& net, QNetwork& target_net) { target_net = net; }

/// Seed for episode `index` of a run keyed by `master_seed`.
inline std::uint64_t episode_seed(std::uint64_t master_seed, std::uint64_t index) {
  return Rng::mix(Rng::mix(master_seed ^ 0x5EED5EED5EED5EEDULL) + index);
}

/// Online/target networks, replay memory, optimiser and the random streams
/// that drive them.
class DqnAgent {
 public:
  explicit DqnAgent(const TrainConfig& cfg)
      : cfg_((cfg.validate(), cfg)),
        init_rng_(Rng::substream(cfg.master_seed, "init")),
        explore_rng_(Rng::substream(cfg.master_seed, "explore")),
        replay_rng_(Rng::substream(cfg.master_seed, "replay")),
        online_(QNetwork::glorot(cfg.layer_sizes(), init_rng_)),
        target_(online_),
        buffer_(cfg.replay_capacity),
        opt_(cfg.learning_rate, cfg.momentum) {}

  double epsilon() const { return cfg_.epsilon.value(steps_); }

  Action act(const StateVector& s) { return select_action(online_, s, epsilon(), explore_rng_); }

  /// Stores a transition, trains once the buffer is warm and syncs the
  /// target on schedule.  Returns the minibatch loss when an update ran.
  std::optional<double> observe(const Transition& t) {
    buffer_.push(t);
    ++steps_;
    std::optional<double> loss;
    if (buffer_.size() >= cfg_.warmup) {
      loss = train_step(online_, target_, buffer_, cfg_, replay_rng_, opt_);
      ++updates_;
    }
    if (steps_ % cfg_.target_sync_interval == 0) sync_target(online_, target_);
    return loss;
  }

  const QNetwork& online() const { return online_; }
  const QNetwork& target() const { return target_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  std::uint64_t steps() const { return steps_; }
  std::uint64_t updates() const { return updates_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  TrainConfig cfg_;
  Rng init_rng_;
  Rng explore_rng_;
  Rng replay_rng_;
  QNetwork online_;
  QNetwork target_;
  ReplayBuffer buffer_;
  SgdOptimizer opt_;
  std::uint64_t steps_ = 0;
  std::uint64_t updates_ = 0;
};

template <class E>
concept LearningEnvironment = requires(E e, std::uint64_t seed, int action) {
  { e.reset(seed) } -> std::convertible_to<StateVector>;
  { e.step(action) } -> std::convertible_to<Feedback>;
};

struct EpisodeStats {
  double total_reward = 0.0;
  double epsilon = 0.0;      // at episode end
  double mean_loss = 0.0;    // NaN when no update ran
  std::uint64_t steps = 0;
};

struct TrainResult {
  QNetwork policy;
  std::vector<EpisodeStats> episodes;
  std::uint64_t total_steps = 0;
  std::uint64_t updates = 0;
  std::optional<double> best_score;  // set when checkpoints were scored
};

/// Scores a candidate network; higher is better.
using CheckpointScore = std::function<double(const QNetwork&)>;

/// Runs cfg.episodes episodes of act / step / store / learn.  With a scorer
/// and a nonzero checkpoint interval, the returned policy is the best-scoring
/// online network seen at the checkpoints (ties keep the earlier one).
template <LearningEnvironment Env>
TrainResult train(Env& env, const TrainConfig& cfg,
                  const std::function<void(std::uint64_t, const EpisodeStats&)>& on_episode = {},
                  const CheckpointScore& score = {}) {
  DqnAgent agent(cfg);
  TrainResult result;
  std::optional<double> best_score;
  auto checkpoint = [&] {
    const double v = score(agent.online());
    if (!best_score || v > *best_score) {
      best_score = v;
      result.policy = agent.online();
    }
  };
  for (std::uint64_t ep = 0; ep < cfg.episodes; ++ep) {
    StateVector s = env.reset(episode_seed(cfg.master_seed, ep));
    EpisodeStats stats;
    double loss_sum = 0.0;
    std::uint64_t loss_n = 0;
    for (;;) {
      const Action a = agent.act(s);
      const Feedback fb = env.step(static_cast<int>(a));
      if (!std::isfinite(fb.reward)) throw NumericalError("non-finite reward");
      if (auto loss = agent.observe({s, static_cast<int>(a), fb.reward, fb.next_state, fb.done})) {
        loss_sum += *loss;
        ++loss_n;
      }
      stats.total_reward += fb.reward;
      ++stats.steps;
      s = fb.next_state;
      if (fb.done) break;
    }
    stats.epsilon = agent.epsilon();
    stats.mean_loss = loss_n ? loss_sum / static_cast<double>(loss_n)
                             : std::numeric_limits<double>::quiet_NaN();
    result.episodes.push_back(stats);
    if (on_episode) on_episode(ep, stats);
    if (score && cfg.checkpoint_interval > 0 &&
        ((ep + 1) % cfg.checkpoint_interval == 0 || ep + 1 == cfg.episodes))
      checkpoint();
  }
  if (!best_score) result.policy = agent.online();
  result.best_score = best_score;
  result.total_steps = agent.steps();
  result.updates = agent.updates();
  return result;
}

// Policy file: "CWNDDQN1", u32 version, u32 layer count, then per layer
// u32 rows, u32 cols, rows*cols f64 weights (row-major), rows f64 biases.
// All integers and reals little-endian.

inline constexpr std::string_view kPolicyMagic = "CWNDDQN1";
inline constexpr std::uint32_t kPolicyVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : b_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw MalformedPolicyFile("policy file truncated");
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_policy(const QNetwork& net) {
  std::string out(kPolicyMagic);
  detail::put_u32(out, kPolicyVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& l : net.layers()) {
    detail::put_u32(out, static_cast<std::uint32_t>(l.rows));
    detail::put_u32(out, static_cast<std::uint32_t>(l.cols));
    for (double w : l.weights) detail::put_f64(out, w);
    for (double b : l.biases) detail::put_f64(out, b);
  }
  return out;
}

inline QNetwork parse_policy(std::string_view bytes) {
  detail::Reader in(bytes);
  if (in.remaining() < kPolicyMagic.size() || in.take(kPolicyMagic.size()) != kPolicyMagic)
    throw MalformedPolicyFile("bad magic");
  if (const auto v = in.u32(); v != kPolicyVersion)
    throw MalformedPolicyFile("unsupported policy version " + std::to_string(v));
  const std::uint32_t count = in.u32();
  if (count == 0 || count > 64) throw MalformedPolicyFile("bad layer count");
  std::vector<DenseLayer> layers;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t rows = in.u32();
    const std::uint32_t cols = in.u32();
    if (rows == 0 || cols == 0 || rows > 4096 || cols > 4096)
      throw MalformedPolicyFile("bad layer shape");
    if (!layers.empty() && layers.back().rows != cols)
      throw MalformedPolicyFile("layer shapes do not chain");
    const std::size_t payload = (std::size_t(rows) * cols + rows) * 8;
    if (in.remaining() < payload) throw MalformedPolicyFile("policy payload truncated");
    DenseLayer l(rows, cols);
    for (auto& w : l.weights) w = in.f64();
    for (auto& b : l.biases) b = in.f64();
    layers.push_back(std::move(l));
  }
  if (in.remaining() != 0) throw MalformedPolicyFile("trailing bytes after policy payload");
  if (layers.front().cols != kStateDim || layers.back().rows != kNumActions)
    throw MalformedPolicyFile("policy must map 4 inputs to 3 outputs");
  std::vector<std::size_t> sizes{layers.front().cols};
  for (const auto& l : layers) sizes.push_back(l.rows);
  QNetwork net(sizes);
  net.layers() = std::move(layers);
  if (!net.all_finite()) throw MalformedPolicyFile("non-finite parameter");
  return net;
}

inline void save_policy(const QNetwork& net, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const auto bytes = serialize_policy(net);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

inline QNetwork load_policy(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MalformedPolicyFile("cannot open policy file " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return parse_policy(bytes);
}

}  // namespace cwndlab
