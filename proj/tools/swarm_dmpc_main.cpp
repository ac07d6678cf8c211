#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "swarm_dmpc/harness.hpp"
#include "swarm_dmpc/planner.hpp"
#include "swarm_dmpc/scenario.hpp"
#include "swarm_dmpc/thread_pool.hpp"

namespace {

using namespace swarm_dmpc;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitSafetyViolation = 2;
constexpr double kSafetySlack = 0.02;  // tolerance on logged CBF margins, meters
constexpr long kRecoveryWindow = 10;   // cycles after a push end

struct CommonArgs {
  std::string scenario_path;
  std::string out_dir = "out";
  std::vector<std::string> overrides;
  std::optional<unsigned> seed;
  std::optional<std::string> solver;
  std::optional<int> admm_iters;
  bool quiet = false;
};

Scenario load_with_overrides(const CommonArgs& args) {
  std::ifstream in(args.scenario_path);
  if (!in) throw std::invalid_argument("cannot open scenario file: " + args.scenario_path);
  nlohmann::json j;
  in >> j;
  for (const auto& kv : args.overrides) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("override must look like key=value: " + kv);
    }
    apply_override(j, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (args.seed.has_value()) j["seed"] = *args.seed;
  if (args.solver.has_value()) j["solver"] = *args.solver;
  if (args.admm_iters.has_value()) j["admm"]["max_iter"] = *args.admm_iters;
  return scenario_from_json(j);
}

/// Minimum of the logged obstacle and inter-agent margins at one cycle.
double cycle_min_margin(const StepLog& s) {
  double lo = std::numeric_limits<double>::infinity();
  for (const auto& a : s.agents) lo = std::min(lo, a.h_obs);
  for (const auto& [edge, h] : s.edge_h) lo = std::min(lo, h);
  return lo;
}

/// Exit-code policy: nominal scenarios must stay above -kSafetySlack at every
/// cycle; scenarios with pushes must recover to non-negative margins within
/// kRecoveryWindow cycles of each push end and hold until the next push.
bool safety_ok(const RunResult& result, std::string& why) {
  const auto& pushes = result.scenario.disturbances;
  if (pushes.empty()) {
    for (const auto& s : result.steps) {
      if (cycle_min_margin(s) < -kSafetySlack) {
        why = "margin " + std::to_string(cycle_min_margin(s)) + " at cycle " +
              std::to_string(s.cycle);
        return false;
      }
    }
    return true;
  }
  for (size_t p = 0; p < pushes.size(); ++p) {
    const long recover_by = pushes[p].end_cycle + kRecoveryWindow;
    long next_start = std::numeric_limits<long>::max();
    for (const auto& other : pushes) {
      if (other.start_cycle > pushes[p].end_cycle) {
        next_start = std::min(next_start, other.start_cycle);
      }
    }
    for (const auto& s : result.steps) {
      if (s.cycle <= recover_by || s.cycle >= next_start) continue;
      if (cycle_min_margin(s) < 0.0) {
        why = "margin not recovered " + std::to_string(kRecoveryWindow) +
              " cycles after push " + std::to_string(p) + " (cycle " +
              std::to_string(s.cycle) + ")";
        return false;
      }
    }
  }
  return true;
}

long recovery_cycles(const RunResult& result) {
  long worst = 0;
  for (const auto& push : result.scenario.disturbances) {
    long last_negative = push.end_cycle;
    for (const auto& s : result.steps) {
      if (s.cycle > push.end_cycle && cycle_min_margin(s) < 0.0) {
        last_negative = s.cycle;
      } else if (s.cycle > last_negative + kRecoveryWindow) {
        break;
      }
    }
    worst = std::max(worst, last_negative - push.end_cycle);
  }
  return worst;
}

void print_run_summary(const RunResult& result) {
  const auto& s = result.scenario;
  std::vector<double> cycle_times;
  long degraded = 0, pushed = 0;
  for (const auto& step : result.steps) {
    cycle_times.push_back(step.cycle_seconds);
    for (const auto& a : step.agents) {
      degraded += a.degraded ? 1 : 0;
      pushed += a.pushed ? 1 : 0;
    }
  }
  const TimingStats stats = timing_stats(cycle_times);
  std::printf("scenario           : %s (%s, %d agents, %d edges)\n", s.name.c_str(),
              to_string(s.solver), s.num_agents(), s.graph.num_edges());
  std::printf("cycles             : %zu\n", result.steps.size());
  for (int i = 0; i < s.num_agents(); ++i) {
    const long arrival = result.first_arrival_cycle(i);
    if (arrival >= 0) {
      std::printf("agent %d arrival    : cycle %ld\n", i, arrival);
    } else {
      std::printf("agent %d arrival    : not within tolerance\n", i);
    }
  }
  std::printf("min h (obstacle)   : %g\n", result.min_obstacle_h());
  std::printf("min h (inter-agent): %g\n", result.min_interagent_h());
  std::printf("cycle time         : %.3f ms avg, %.3f ms std\n", stats.avg * 1e3,
              stats.stddev * 1e3);
  std::printf("total objective    : %.6g\n", result.total_objective());
  if (!s.disturbances.empty()) {
    std::printf("degraded/push      : %ld degraded agent-cycles, %ld pushed; "
                "recovery within %ld cycles\n",
                degraded, pushed, recovery_cycles(result));
  } else if (degraded > 0) {
    std::printf("degraded           : %ld agent-cycles\n", degraded);
  }
}

int cmd_run(const CommonArgs& args) {
  const Scenario scenario = load_with_overrides(args);
  const auto violations = validate_scenario(scenario);
  if (!violations.empty()) {
    for (const auto& v : violations) std::cerr << "scenario error: " << v << "\n";
    return kExitError;
  }
  if (!args.quiet) {
    std::cout << "effective config:\n" << scenario_to_json(scenario).dump(2) << "\n";
  }
  const RunResult result = run(scenario);

  fs::create_directories(args.out_dir);
  write_jsonl_log(result, args.out_dir + "/log.jsonl");
  write_trajectory_csv(result, args.out_dir + "/trajectory.csv");
  write_timings_json(result, args.out_dir + "/timings.json");
  if (!args.quiet) print_run_summary(result);

  std::string why;
  if (!safety_ok(result, why)) {
    std::cerr << "safety invariant violated: " << why << "\n";
    return kExitSafetyViolation;
  }
  return kExitOk;
}

int cmd_compare(const CommonArgs& args) {
  const Scenario scenario = load_with_overrides(args);
  const auto violations = validate_scenario(scenario);
  if (!violations.empty()) {
    for (const auto& v : violations) std::cerr << "scenario error: " << v << "\n";
    return kExitError;
  }
  const ComparisonReport report = compare(scenario);

  fs::create_directories(args.out_dir);
  std::ofstream out(args.out_dir + "/compare_report.json");
  out << report.to_json().dump(2) << "\n";
  out.close();

  std::printf("%-22s %10s %10s\n", "QP Type", "Avg (ms)", "Std (ms)");
  std::printf("%-22s %10.3f %10.3f\n", "Node-update QP", report.node_qp.avg * 1e3,
              report.node_qp.stddev * 1e3);
  std::printf("%-22s %10.3f %10.3f\n", "Edge-update QP", report.edge_qp.avg * 1e3,
              report.edge_qp.stddev * 1e3);
  std::printf("%-22s %10.3f %10.3f\n", "Total (ADMM)", report.admm_cycle.avg * 1e3,
              report.admm_cycle.stddev * 1e3);
  std::printf("%-22s %10.3f %10.3f\n", "Total (Centralized)",
              report.centralized_cycle.avg * 1e3, report.centralized_cycle.stddev * 1e3);
  std::printf("node/edge QPs per iteration : %d / %d\n", report.node_qps_per_iteration,
              report.edge_qps_per_iteration);
  std::printf("max position deviation      : %.6g m\n", report.max_position_deviation);
  std::printf("objective (ADMM/central)    : %.6g / %.6g (gap %.3g%%)\n",
              report.objective_distributed, report.objective_centralized,
              report.objective_gap * 1e2);
  std::printf("min h obs (ADMM/central)    : %g / %g\n", report.min_h_obs_distributed,
              report.min_h_obs_centralized);
  std::printf("min h edge (ADMM/central)   : %g / %g\n", report.min_h_edge_distributed,
              report.min_h_edge_centralized);

  // the exit contract tracks the distributed run; the centralized margins are
  // reported for comparison only
  if (scenario.disturbances.empty()) {
    const double lo =
        std::min(report.min_h_obs_distributed, report.min_h_edge_distributed);
    if (lo < -kSafetySlack) {
      std::cerr << "safety invariant violated: min margin " << lo << "\n";
      return kExitSafetyViolation;
    }
  }
  return kExitOk;
}

int cmd_validate(const CommonArgs& args) {
  const Scenario scenario = load_with_overrides(args);
  const auto violations = validate_scenario(scenario);
  if (!violations.empty()) {
    for (const auto& v : violations) std::cerr << "scenario error: " << v << "\n";
    return kExitError;
  }
  if (!args.quiet) std::cout << "scenario ok: " << scenario.name << "\n";
  return kExitOk;
}

int cmd_dump_qp(const CommonArgs& args) {
  const Scenario s = load_with_overrides(args);
  const auto violations = validate_scenario(s);
  if (!violations.empty()) {
    for (const auto& v : violations) std::cerr << "scenario error: " << v << "\n";
    return kExitError;
  }
  fs::create_directories(args.out_dir);

  const int n = s.horizon;
  const int block = n * kStageDim;
  QpSettings settings = s.qp;
  settings.validate_cost = true;

  // cycle-0 operating points: decoupled tracking solves at the stationary
  // linearization, as in the closed loop
  std::vector<AgentState> starts;
  std::vector<ReferenceTrajectory> refs;
  std::vector<AgentTrajectory> op;
  std::vector<Eigen::VectorXd> xi0;
  for (const auto& [start, goal] : s.agents) {
    starts.push_back(start);
    refs.push_back(bezier_reference(start, goal, n));
    const AgentTrajectory hold = AgentTrajectory::hold(start, n);
    const QpProblem local = build_local_qp(start, hold, refs.back(), s.obstacles,
                                           s.weights, s.bounds, s.safety, s.ts,
                                           s.obstacle_activation_radius);
    const QpSolution sol = solve(local, settings);
    xi0.push_back(sol.status == QpStatus::PrimalInfeasible ? hold.flatten() : sol.x);
    op.push_back(AgentTrajectory::unflatten(xi0.back(), 0));
  }

  for (int i = 0; i < s.num_agents(); ++i) {
    const QpProblem local = build_local_qp(starts[i], op[i], refs[i], s.obstacles,
                                           s.weights, s.bounds, s.safety, s.ts,
                                           s.obstacle_activation_radius);
    const std::string path = args.out_dir + "/node_agent" + std::to_string(i) + ".json";
    dump_qp_json(local, path, "node QP, agent " + std::to_string(i));
    std::printf("node QP agent %d        : %d variables, %ld eq, %ld ineq -> %s\n", i,
                local.num_vars(), local.Aeq.rows(), local.Ain.rows(), path.c_str());
  }

  for (const auto& [i, j] : s.graph.edges) {
    TrajectoryLayout li{n, 0, 2 * block};
    TrajectoryLayout lj{n, block, 2 * block};
    const EdgeSet set = build_edge_set(starts[i], op[i], starts[j], op[j], s.safety,
                                       s.edge_cbf, li, lj);
    const QpProblem edge_qp = build_edge_qp(set.psi_rows, n, xi0[i], xi0[j],
                                            s.weights.phi_weight, s.admm.rho);
    const std::string path =
        args.out_dir + "/edge_" + std::to_string(i) + "_" + std::to_string(j) + ".json";
    dump_qp_json(edge_qp, path, "edge QP " + std::to_string(i) + "-" + std::to_string(j));
    std::printf("edge QP (%d,%d)          : %d variables, %ld eq, %ld ineq -> %s\n", i, j,
                edge_qp.num_vars(), edge_qp.Aeq.rows(), edge_qp.Ain.rows(), path.c_str());
  }

  const QpProblem central =
      build_centralized_qp(starts, op, refs, s.obstacles, s.graph.edges, s.weights,
                           s.bounds, s.safety, s.ts, s.edge_cbf,
                           s.obstacle_activation_radius);
  dump_qp_json(central, args.out_dir + "/centralized.json", "centralized QP");
  std::printf("centralized QP         : %d variables, %ld eq, %ld ineq -> %s\n",
              central.num_vars(), central.Aeq.rows(), central.Ain.rows(),
              (args.out_dir + "/centralized.json").c_str());
  return kExitOk;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_scenario = true) {
  auto* opt = cmd->add_option("scenario", args.scenario_path, "scenario JSON file");
  if (needs_scenario) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--override", args.overrides,
                  "dotted-path scenario override, e.g. admm.rho=20 (repeatable)");
  cmd->add_option("--seed", args.seed, "seed override");
  cmd->add_option("--solver", args.solver, "solver override")
      ->check(CLI::IsMember({"distributed", "centralized", "decoupled"}));
  cmd->add_option("--admm-iters", args.admm_iters, "ADMM iterations per cycle override");
  cmd->add_flag("--quiet", args.quiet, "suppress config echo and summary");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"decentralized CBF-MPC planner"};
  app.require_subcommand(1);

  CommonArgs run_args, compare_args, validate_args, dump_args;
  auto* run_cmd = app.add_subcommand("run", "simulate one scenario");
  add_common(run_cmd, run_args);
  auto* compare_cmd =
      app.add_subcommand("compare", "run distributed vs centralized and report");
  add_common(compare_cmd, compare_args);
  auto* validate_cmd = app.add_subcommand("validate", "check a scenario file");
  add_common(validate_cmd, validate_args);
  auto* dump_cmd = app.add_subcommand("dump-qp", "write the first cycle's QPs as JSON");
  add_common(dump_cmd, dump_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) return cmd_run(run_args);
    if (compare_cmd->parsed()) return cmd_compare(compare_args);
    if (validate_cmd->parsed()) return cmd_validate(validate_args);
    if (dump_cmd->parsed()) return cmd_dump_qp(dump_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
