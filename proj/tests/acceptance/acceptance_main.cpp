// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Heavier closed-loop checks run the packaged scenarios through the
// library and the installed CLI binary.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "support/active_set_oracle.hpp"
#include "swarm_dmpc/harness.hpp"
#include "swarm_dmpc/planner.hpp"

namespace fs = std::filesystem;
using namespace swarm_dmpc;
using nlohmann::json;

namespace {

struct Options {
  std::string cli;
  std::string scenarios;
  std::string work = "acceptance_work";
};

int g_failures = 0;

void report(int criterion, bool ok, const std::string& what, double seconds) {
  std::printf("%s criterion-%d: %s (%.1f s)\n", ok ? "PASS" : "FAIL", criterion,
              what.c_str(), seconds);
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

int run_cli(const Options& opt, const std::string& args, const std::string& log_name) {
  const std::string cmd = opt.cli + " " + args + " > " + opt.work + "/" + log_name +
                          " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

std::vector<json> read_jsonl(const std::string& path) {
  std::vector<json> rows;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(json::parse(line));
  }
  return rows;
}

Scenario load(const Options& opt, const std::string& name) {
  return load_scenario(opt.scenarios + "/" + name);
}

// --- criterion 1: QP dimensions via dump-qp --------------------------------

void criterion_1(const Options& opt) {
  Timer timer;
  bool ok = true;
  const std::string swap = opt.scenarios + "/two_agent_swap.json";

  ok &= run_cli(opt, "dump-qp " + swap + " --quiet --out " + opt.work + "/dump_all",
                "c1_dump_all.txt") == 0;
  ok &= run_cli(opt,
                "dump-qp " + swap + " --quiet --override edge_cbf=first_step --out " +
                    opt.work + "/dump_first",
                "c1_dump_first.txt") == 0;
  int node_vars = -1, edge_vars = -1;
  if (ok) {
    json jn, je;
    std::ifstream(opt.work + "/dump_all/node_agent0.json") >> jn;
    std::ifstream(opt.work + "/dump_first/edge_0_1.json") >> je;
    node_vars = jn["num_vars"].get<int>();
    edge_vars = je["num_vars"].get<int>();
    ok &= node_vars == 250;
    ok &= edge_vars == 501;
  }
  report(1, ok,
         "node QP has 250 variables and first_step edge QP has 501 (got " +
             std::to_string(node_vars) + ", " + std::to_string(edge_vars) + ")",
         timer.seconds());
}

// --- criterion 2: iteration accounting --------------------------------------

void criterion_2(const Options& opt) {
  Timer timer;
  bool ok = true;
  std::ostringstream what;
  struct Case {
    const char* scenario;
    int nodes, edges;
  };
  for (const Case& c : {Case{"two_agent_swap.json", 2, 1},
                        Case{"four_agent_cross.json", 4, 6}}) {
    const std::string out = opt.work + "/c2_" + std::to_string(c.nodes);
    ok &= run_cli(opt,
                  "run " + opt.scenarios + "/" + c.scenario +
                      " --quiet --override duration=6 --out " + out,
                  "c2_run.txt") == 0;
    for (const auto& step : read_jsonl(out + "/log.jsonl")) {
      const int iters = step["iterations"].get<int>();
      ok &= iters == 15;
      ok &= step["node_qps"].get<int>() == c.nodes * iters;
      ok &= step["edge_qps"].get<int>() == c.edges * iters;
    }
    what << c.nodes << "+" << c.edges << " QPs/iteration  ";
  }
  report(2, ok, "per-iteration QP counts: " + what.str(), timer.seconds());
}

// --- criterion 3: centralized-distributed equivalence -----------------------

void criterion_3(const Options& opt) {
  Timer timer;
  bool ok = true;
  std::ostringstream what;
  for (const char* name : {"two_agent_swap.json", "four_agent_cross.json"}) {
    Scenario s = load(opt, name);
    ok &= s.admm.max_admm_iter == 15 && s.admm.rho == 20.0;
    const ComparisonReport rep = compare(s);
    ok &= rep.max_position_deviation <= 0.05;
    ok &= rep.objective_gap <= 0.02;
    what << name << ": dev " << rep.max_position_deviation << " m, gap "
         << rep.objective_gap * 100 << "%  ";
  }
  report(3, ok, "closed loops agree within 0.05 m and 2%: " + what.str(),
         timer.seconds());
}

// --- criterion 4: safety invariance and push recovery -----------------------

void criterion_4(const Options& opt) {
  Timer timer;
  bool ok = true;
  std::ostringstream what;
  for (const char* name :
       {"two_agent_swap.json", "four_agent_cross.json", "rough_field_10obs.json"}) {
    const RunResult result = run(load(opt, name));
    double lo = std::numeric_limits<double>::infinity();
    for (const auto& step : result.steps) {
      for (const auto& a : step.agents) lo = std::min(lo, a.h_obs);
      for (const auto& [e, h] : step.edge_h) lo = std::min(lo, h);
    }
    ok &= lo >= -0.02;
    what << name << " min h " << lo << "  ";
    if (std::string(name) == "two_agent_swap.json") {
      // frozen arrival regression for the packaged swap
      for (int a = 0; a < result.scenario.num_agents(); ++a) {
        const long arrival = result.first_arrival_cycle(a);
        ok &= arrival >= 0 && arrival <= 200;
      }
    }
  }
  {
    const Scenario s = load(opt, "push_recovery.json");
    const RunResult result = run(s);
    long last_negative = -1;
    double lowest = 0.0;
    for (const auto& step : result.steps) {
      double lo = std::numeric_limits<double>::infinity();
      for (const auto& a : step.agents) lo = std::min(lo, a.h_obs);
      for (const auto& [e, h] : step.edge_h) lo = std::min(lo, h);
      lowest = std::min(lowest, lo);
      if (lo < 0.0) last_negative = step.cycle;
    }
    long push_end = 0;
    for (const auto& d : s.disturbances) push_end = std::max(push_end, d.end_cycle);
    ok &= lowest < 0.0;                   // the push does break the margin
    ok &= last_negative <= push_end + 10; // and it recovers in time
    what << "push_recovery dip " << lowest << ", recovered by cycle " << last_negative
         << " (push end " << push_end << ")";
  }
  report(4, ok,
         "margins >= -0.02 on push-free runs; push recovers within 10 cycles: " +
             what.str(),
         timer.seconds());
}

// --- criterion 5: timing trend ----------------------------------------------

void criterion_5(const Options& opt) {
  Timer timer;
  bool ok = true;
  std::ostringstream what;
  Scenario base = load(opt, "four_agent_cross.json");
  for (int repeat = 0; repeat < 3; ++repeat) {
    Scenario dist = base;
    dist.solver = SolverMode::Distributed;
    Scenario cent = base;
    cent.solver = SolverMode::Centralized;
    const RunResult rd = run(dist);
    const RunResult rc = run(cent);
    auto mean_cycle = [](const RunResult& r) {
      double sum = 0.0;
      for (const auto& s : r.steps) sum += s.cycle_seconds;
      return sum / static_cast<double>(r.steps.size());
    };
    const double td = mean_cycle(rd);
    const double tc = mean_cycle(rc);
    ok &= td < tc;
    what << "run " << repeat << ": " << td * 1e3 << " ms vs " << tc * 1e3
         << " ms (ratio " << td / tc << ")  ";
  }
  report(5, ok,
         "distributed mean cycle time below centralized on 3 repeats: " + what.str(),
         timer.seconds());
}

// --- criterion 6: solver correctness vs the active-set oracle ---------------

void criterion_6(const Options&) {
  Timer timer;
  bool ok = true;
  int worst_trial = -1;
  double worst_x = 0.0, worst_obj = 0.0;
  std::mt19937 rng(20240831);
  std::uniform_int_distribution<int> nd(2, 12), med(0, 3), mid(0, 5);
  QpSettings settings;
  settings.eps_abs = 1e-9;
  settings.eps_rel = 1e-9;
  settings.max_iter = 20000;
  settings.polish = true;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = nd(rng);
    const int me = std::min(med(rng), n - 1);
    const int mi = mid(rng);
    std::uniform_int_distribution<int> nbd(0, (8 - mi) / 2);
    const QpProblem p = oracle::random_qp(rng, n, me, mi, nbd(rng));
    const auto ref = oracle::active_set_oracle(p);
    const QpSolution sol = solve(p, settings);
    const double dx = ref.feasible && sol.status == QpStatus::Solved
                          ? (sol.x - ref.x).cwiseAbs().maxCoeff()
                          : std::numeric_limits<double>::infinity();
    const double dobj = std::abs(sol.objective - ref.objective);
    if (dx > 1e-5 || dobj > 1e-7) {
      ok = false;
      worst_trial = trial;
      worst_x = dx;
      worst_obj = dobj;
    }
  }
  std::ostringstream what;
  what << "200 random QPs match the enumeration oracle within 1e-5/1e-7";
  if (!ok) {
    what << " (trial " << worst_trial << ": dx " << worst_x << ", dobj " << worst_obj
         << ")";
  }
  report(6, ok, what.str(), timer.seconds());
}

// --- criterion 7: linearization correctness ----------------------------------

void criterion_7(const Options&) {
  Timer timer;
  bool ok = true;
  std::mt19937 rng(77);
  std::uniform_real_distribution<double> pos(-5.0, 5.0), heading(-2.9, 2.9),
      vel(-0.8, 0.8), omega(-1.5, 1.5);
  constexpr double kEps = 1e-6;
  const SafetyParams params{0.5, 0.3};

  for (int trial = 0; trial < 100; ++trial) {
    const AgentState x(pos(rng), pos(rng), heading(rng));
    const ControlInput u{vel(rng), omega(rng)};
    const LinearizedDynamics lin = linearize(x, u, 0.1);
    for (int c = 0; c < 3; ++c) {
      Eigen::Vector3d hi = x.vec(), lo = x.vec();
      hi[c] += kEps;
      lo[c] -= kEps;
      const Eigen::Vector3d fd = (step(AgentState::from_vec(hi), u, 0.1).vec() -
                                  step(AgentState::from_vec(lo), u, 0.1).vec()) /
                                 (2 * kEps);
      ok &= (lin.A.col(c) - fd).cwiseAbs().maxCoeff() < 1e-6;
    }
    for (int c = 0; c < 2; ++c) {
      Eigen::Vector2d hi = u.vec(), lo = u.vec();
      hi[c] += kEps;
      lo[c] -= kEps;
      const Eigen::Vector3d fd = (step(x, {hi[0], hi[1]}, 0.1).vec() -
                                  step(x, {lo[0], lo[1]}, 0.1).vec()) /
                                 (2 * kEps);
      ok &= (lin.B.col(c) - fd).cwiseAbs().maxCoeff() < 1e-6;
    }
    ok &= (lin.A * x.vec() + lin.B * u.vec() + lin.c - step(x, u, 0.1).vec())
              .cwiseAbs()
              .maxCoeff() <= 1e-12;
  }

  int checked = 0;
  while (checked < 100) {
    const AgentState x(pos(rng), pos(rng), 0.0);
    const Obstacle o{{0.0, 0.0}};
    if ((x.position() - o.center).norm() < 0.3) continue;
    ++checked;
    AgentTrajectory op;
    op.states = {x};
    op.inputs = {ControlInput{}};
    const auto rows = obstacle_cbf_rows(x, op, o, params, TrajectoryLayout{1, 0, 5});
    Eigen::Vector2d grad = Eigen::Vector2d::Zero();
    for (const auto& [idx, v] : rows[0].coeffs) {
      if (idx < 2) grad[idx] = v;
    }
    const Eigen::Vector2d fd(
        (h_obstacle({x.px + kEps, x.py, 0}, o, params) -
         h_obstacle({x.px - kEps, x.py, 0}, o, params)) / (2 * kEps),
        (h_obstacle({x.px, x.py + kEps, 0}, o, params) -
         h_obstacle({x.px, x.py - kEps, 0}, o, params)) / (2 * kEps));
    ok &= (grad - fd).cwiseAbs().maxCoeff() < 1e-6;
    // exactness of the affine row at the operating point
    const double at_op = rows[0].value(op.flatten()) - rows[0].rhs;
    const double expect = h_obstacle(x, o, params) - 0.7 * h_obstacle(x, o, params);
    ok &= std::abs(at_op - expect) <= 1e-12;
  }
  report(7, ok,
         "dynamics and CBF gradients match finite differences; affine models exact at "
         "operating points",
         timer.seconds());
}

// --- criterion 8: decoupling limit -------------------------------------------

void criterion_8(const Options&) {
  Timer timer;
  bool ok = true;
  json j;
  j["name"] = "far_apart";
  j["horizon"] = 50;
  j["duration"] = 20;
  j["agents"] =
      json::array({json{{"start", {0.0, 0.0, 0.0}}, {"goal", {2.0, 0.0, 0.0}}},
                   json{{"start", {0.0, 6.0, 0.0}}, {"goal", {2.0, 6.0, 0.0}}}});
  const Scenario base = scenario_from_json(j);

  std::vector<RunResult> results;
  for (SolverMode mode :
       {SolverMode::Distributed, SolverMode::Centralized, SolverMode::Decoupled}) {
    Scenario s = base;
    s.solver = mode;
    results.push_back(run(s));
  }
  // separation stays at 6 m = 12 d_th throughout
  double min_sep = std::numeric_limits<double>::infinity();
  for (const auto& step : results[0].steps) {
    min_sep = std::min(min_sep, step.edge_h.at({0, 1}) + 0.5);
  }
  ok &= min_sep >= 10 * 0.5;

  double worst = 0.0;
  for (size_t t = 0; t < results[0].steps.size(); ++t) {
    for (size_t a = 0; a < 2; ++a) {
      const auto& plan0 = results[0].steps[t].agents[a].plan;
      for (size_t other = 1; other < 3; ++other) {
        const auto& plan1 = results[other].steps[t].agents[a].plan;
        for (int k = 0; k < plan0.horizon(); ++k) {
          worst = std::max(worst, std::abs(plan0.states[k].px - plan1.states[k].px));
          worst = std::max(worst, std::abs(plan0.states[k].py - plan1.states[k].py));
        }
      }
    }
  }
  ok &= worst <= 1e-3;
  std::ostringstream what;
  what << "distributed/centralized/decoupled plans agree within 1e-3 m at >= 10 d_th "
       << "(max difference " << worst << " m, min separation " << min_sep << " m)";
  report(8, ok, what.str(), timer.seconds());
}

// --- criterion 9: determinism ------------------------------------------------

void criterion_9(const Options& opt) {
  Timer timer;
  bool ok = true;
  const std::string swap = opt.scenarios + "/two_agent_swap.json";
  auto run_once = [&](const std::string& out, const char* threads) {
    setenv("SWARM_DMPC_THREADS", threads, 1);
    const int rc =
        run_cli(opt, "run " + swap + " --quiet --seed 7 --out " + out, "c9_run.txt");
    unsetenv("SWARM_DMPC_THREADS");
    return rc == 0;
  };
  ok &= run_once(opt.work + "/c9_a", "2");
  ok &= run_once(opt.work + "/c9_b", "2");
  ok &= run_once(opt.work + "/c9_c", "1");
  if (ok) {
    const std::string log_a = file_bytes(opt.work + "/c9_a/log.jsonl");
    ok &= !log_a.empty();
    ok &= log_a == file_bytes(opt.work + "/c9_b/log.jsonl");
    ok &= log_a == file_bytes(opt.work + "/c9_c/log.jsonl");
    const std::string csv_a = file_bytes(opt.work + "/c9_a/trajectory.csv");
    ok &= !csv_a.empty();
    ok &= csv_a == file_bytes(opt.work + "/c9_b/trajectory.csv");
    ok &= csv_a == file_bytes(opt.work + "/c9_c/trajectory.csv");
  }
  report(9, ok, "same-seed runs are byte-identical single- and multi-threaded",
         timer.seconds());
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--cli") opt.cli = argv[i + 1];
    else if (flag == "--scenarios") opt.scenarios = argv[i + 1];
    else if (flag == "--work") opt.work = argv[i + 1];
  }
  if (opt.cli.empty() || opt.scenarios.empty()) {
    std::cerr << "usage: acceptance_tests --cli BIN --scenarios DIR [--work DIR]\n";
    return 2;
  }
  fs::create_directories(opt.work);

  criterion_1(opt);
  criterion_2(opt);
  criterion_3(opt);
  criterion_4(opt);
  criterion_5(opt);
  criterion_6(opt);
  criterion_7(opt);
  criterion_8(opt);
  criterion_9(opt);

  if (g_failures == 0) {
    std::printf("all 9 acceptance criteria passed\n");
    return 0;
  }
  std::printf("%d acceptance criteria failed\n", g_failures);
  return 1;
}
