// cwndlab: train a DQN window controller, evaluate it, and compare it with
// New Reno on the dumbbell topology.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage / configuration error.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cwndlab/experiment.hpp"

namespace {

using namespace cwndlab;

struct CommonFlags {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::optional<double> alpha;
  std::optional<double> beta;
  std::optional<std::uint64_t> episodes;
  std::optional<double> duration_s;
  std::optional<double> interval_ms;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "key = value experiment config file");
  cmd->add_option("--seed", f.seeds,
                  "seed (repeatable); evaluation seeds, or the master seed for train");
  cmd->add_option("--out", f.out, "output directory (default: $CWNDLAB_OUT, else ./out)");
  cmd->add_option("--alpha", f.alpha, "reward weight on throughput (per Mbps)");
  cmd->add_option("--beta", f.beta, "reward weight on latency (per ms)");
  cmd->add_option("--episodes", f.episodes, "training episodes");
  cmd->add_option("--duration", f.duration_s, "episode / run duration in seconds");
  cmd->add_option("--interval", f.interval_ms, "decision interval in milliseconds");
}

/// defaults < $CWNDLAB_OUT < config file < flags
ExperimentConfig resolve(const CommonFlags& f, bool seeds_are_master) {
  ExperimentConfig c;
  if (const char* env = std::getenv("CWNDLAB_OUT"); env != nullptr && *env != '\0')
    c.output_dir = env;
  if (!f.config.empty()) apply_config_file(c, f.config);
  if (!f.out.empty()) c.output_dir = f.out;
  if (f.alpha) c.env.reward.alpha = *f.alpha;
  if (f.beta) c.env.reward.beta = *f.beta;
  if (f.episodes) c.train.episodes = *f.episodes;
  if (f.duration_s) {
    if (*f.duration_s <= 0) throw ConfigError("--duration must be > 0");
    c.env.net.duration = SimTime{static_cast<std::uint64_t>(std::llround(*f.duration_s * 1e6))};
  }
  if (f.interval_ms) {
    if (*f.interval_ms <= 0) throw ConfigError("--interval must be > 0");
    c.env.interval = SimTime{static_cast<std::uint64_t>(std::llround(*f.interval_ms * 1e3))};
  }
  if (!f.seeds.empty()) {
    if (seeds_are_master) {
      c.train.master_seed = f.seeds.front();
    } else {
      c.seeds = f.seeds;
    }
  }
  c.validate();
  return c;
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "cwndlab - DQN congestion-window control on a simulated dumbbell.\n"
      "Settings resolve as: built-in defaults, then $CWNDLAB_OUT (output dir),\n"
      "then --config file, then command-line flags (flags win)."};
  app.require_subcommand(1);

  CommonFlags train_f, eval_f, cmp_f;
  std::string eval_controller = "newreno";
  std::string eval_policy, cmp_policy;
  std::string cmp_baseline = "newreno";
  bool eval_events = false;

  auto* train_cmd = app.add_subcommand("train", "train a DQN policy");
  add_common(train_cmd, train_f);

  auto* eval_cmd = app.add_subcommand("eval", "greedy evaluation of one controller per seed");
  add_common(eval_cmd, eval_f);
  eval_cmd->add_option("--controller", eval_controller, "newreno or rl")
      ->check(CLI::IsMember({"newreno", "rl"}));
  eval_cmd->add_option("--policy", eval_policy, "policy file (controller rl)");
  eval_cmd->add_flag("--event-log", eval_events, "write events.log per run");

  auto* cmp_cmd = app.add_subcommand("compare", "rl policy versus a baseline over the same seeds");
  add_common(cmp_cmd, cmp_f);
  cmp_cmd->add_option("--policy", cmp_policy, "policy file")->required();
  cmp_cmd->add_option("--baseline", cmp_baseline, "baseline controller")
      ->check(CLI::IsMember({"newreno", "rl"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd) {
      auto c = resolve(train_f, true);
      const auto out = run_train(c, log_line);
      std::cout << "policy written to " << out.policy_file.string() << '\n';
    } else if (*eval_cmd) {
      auto c = resolve(eval_f, false);
      if (eval_cmd->count("--controller") > 0 || c.controller == ControllerKind::NewReno)
        c.controller = eval_controller == "rl" ? ControllerKind::Agent : ControllerKind::NewReno;
      if (!eval_policy.empty()) c.policy_path = eval_policy;
      if (eval_events) c.event_log = true;
      const auto runs = run_eval(c);
      for (const auto& r : runs) {
        std::cout << r.summary.controller << " seed=" << r.summary.seed
                  << " latency_ms=" << format_real(r.summary.mean_latency_ms)
                  << " throughput_mbps=" << format_real(r.summary.mean_throughput_mbps)
                  << " drops=" << r.summary.drops << '\n';
      }
    } else if (*cmp_cmd) {
      auto c = resolve(cmp_f, false);
      c.policy_path = cmp_policy;
      const auto baseline = cmp_baseline == "rl" ? ControllerKind::Agent : ControllerKind::NewReno;
      const auto summary = run_compare(c, baseline);
      std::cout << summary_text(summary, cmp_baseline);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const MalformedPolicyFile& e) {
    std::cerr << "MalformedPolicyFile: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
