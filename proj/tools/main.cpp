// Command-line front end: explore (attack search), lint (static policy
// check), replay (run a recorded trace against a scenario).
//
// Exit codes: explore 1 = attack found, 0 = bound exhausted, 3 = state budget
// hit; lint 1 = violations, 0 = clean; replay 0 = reproduces, 1 = fails.
// Any parse, build or usage problem exits 2.

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "hsmlab/policy.hpp"
#include "hsmlab/search.hpp"

namespace {

using namespace hsmlab;

int fail_usage(const std::string& msg) {
  std::cerr << "error: " << msg << "\n";
  return 2;
}

int fail_parse(const std::string& file, const ParseError& e) {
  std::ostringstream os;
  os << file << ":" << e.line << ": " << e.message;
  return fail_usage(os.str());
}

int fail_build(const BuildError& e) {
  std::ostringstream os;
  os << "setup failed at '" << e.subject << "': " << token_error_name(e.failure.code);
  if (e.failure.rule) os << "(" << policy_rule_name(*e.failure.rule) << ")";
  return fail_usage(os.str());
}

struct ExploreArgs {
  std::string scenario_file;
  std::optional<int> depth;
  std::optional<std::string> mode;
  std::optional<std::string> policy;
  std::string strategy = "bfs";
  int workers = 1;
  std::uint64_t max_states = 10'000'000;
  bool honest = false;
  std::string trace_out;
  bool stats = false;
};

int run_explore(const ExploreArgs& args) {
  auto parsed = load_scenario_file(args.scenario_file);
  if (!parsed.ok()) return fail_parse(args.scenario_file, parsed.error());
  Scenario scn = std::move(parsed.value());
  if (args.depth) scn.depth = *args.depth;
  if (args.mode) scn.mode = *args.mode == "paper" ? Mode::Paper : Mode::Full;
  if (args.policy) scn.policy_on = *args.policy == "on";

  SearchConfig cfg;
  cfg.max_depth = scn.depth;
  cfg.strategy = args.strategy == "iddfs" ? Strategy::IDDFS : Strategy::BFS;
  cfg.workers = args.workers;
  cfg.max_states = args.max_states;
  cfg.honest = args.honest;

  auto t0 = std::chrono::steady_clock::now();
  auto run = explore(scn, cfg);
  if (!run.ok()) return fail_build(run.error());
  auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0)
                .count();

  int rc = 0;
  std::uint64_t explored = 0, canonical = 0;
  if (const auto* attack = std::get_if<Attack>(&run.value())) {
    auto text = format_trace(attack->trace);
    std::cout << text;
    std::cout << "ATTACK key=" << attack->key << " steps=" << attack->trace.size() << "\n";
    if (!args.trace_out.empty()) {
      std::ofstream out(args.trace_out, std::ios::binary);
      out << text;
      if (!out) return fail_usage("cannot write '" + args.trace_out + "'");
    }
    explored = attack->states_explored;
    canonical = attack->canonical_states;
    rc = 1;
  } else if (const auto* done = std::get_if<Exhausted>(&run.value())) {
    std::cout << "EXHAUSTED depth=" << done->depth << " states=" << done->canonical_states << "\n";
    explored = done->states_explored;
    canonical = done->canonical_states;
    rc = 0;
  } else {
    const auto& budget = std::get<BudgetExceeded>(run.value());
    std::cout << "BUDGET states=" << budget.canonical_states << " cap=" << budget.max_states
              << "\n";
    explored = budget.states_explored;
    canonical = budget.canonical_states;
    rc = 3;
  }
  if (args.stats)
    std::cout << "STATS explored=" << explored << " canonical=" << canonical << " ms=" << ms
              << "\n";
  return rc;
}

int run_lint(const std::string& file) {
  auto parsed = load_scenario_file(file);
  if (!parsed.ok()) return fail_parse(file, parsed.error());
  auto report = lint(parsed.value());
  for (const auto& v : report)
    std::cout << "VIOLATION " << policy_rule_name(v.rule) << " " << v.subject << " " << v.message
              << "\n";
  return report.empty() ? 0 : 1;
}

int run_replay(const std::string& scenario_file, const std::string& trace_file) {
  auto parsed = load_scenario_file(scenario_file);
  if (!parsed.ok()) return fail_parse(scenario_file, parsed.error());
  std::ifstream in(trace_file, std::ios::binary);
  if (!in) return fail_usage("cannot read '" + trace_file + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  auto steps = parse_trace(buf.str());
  if (!steps.ok()) return fail_parse(trace_file, steps.error());

  auto verdict = replay(parsed.value(), steps.value());
  if (!verdict.ok()) return fail_build(verdict.error());
  if (const auto* ok = std::get_if<ReplayReproduces>(&verdict.value())) {
    std::cout << "REPRODUCES " << ok->key << "\n";
    return 0;
  }
  const auto& f = std::get<ReplayFails>(verdict.value());
  std::cout << "FAILS step=" << f.step << " reason=" << f.reason << "\n";
  return 1;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Symbolic key-management token laboratory"};
  app.require_subcommand(1);

  ExploreArgs eargs;
  auto* explore_cmd = app.add_subcommand("explore", "search for API-level attacks");
  explore_cmd->add_option("--scenario", eargs.scenario_file, "scenario file")->required();
  explore_cmd->add_option("--depth", eargs.depth, "override the scenario's search depth")
      ->check(CLI::NonNegativeNumber);
  explore_cmd->add_option("--mode", eargs.mode, "override the scenario's mode")
      ->check(CLI::IsMember({"full", "paper"}));
  explore_cmd->add_option("--policy", eargs.policy, "override the scenario's policy switch")
      ->check(CLI::IsMember({"on", "off"}));
  explore_cmd->add_option("--strategy", eargs.strategy, "bfs (default) or iddfs")
      ->check(CLI::IsMember({"bfs", "iddfs"}));
  explore_cmd->add_option("--workers", eargs.workers, "parallel expansion workers (bfs)")
      ->check(CLI::PositiveNumber);
  explore_cmd->add_option("--max-states", eargs.max_states, "canonical state budget");
  explore_cmd->add_flag("--honest", eargs.honest, "let honest users join wrap/unwrap");
  explore_cmd->add_option("--trace-out", eargs.trace_out, "write the attack trace to a file");
  explore_cmd->add_flag("--stats", eargs.stats, "print timing and state counts");

  std::string lint_file;
  auto* lint_cmd = app.add_subcommand("lint", "check a scenario against the five rules");
  lint_cmd->add_option("--scenario", lint_file, "scenario file")->required();

  std::string replay_scn, replay_trace;
  auto* replay_cmd = app.add_subcommand("replay", "re-run a recorded trace");
  replay_cmd->add_option("--scenario", replay_scn, "scenario file")->required();
  replay_cmd->add_option("--trace", replay_trace, "trace file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (explore_cmd->parsed()) return run_explore(eargs);
  if (lint_cmd->parsed()) return run_lint(lint_file);
  return run_replay(replay_scn, replay_trace);
}
