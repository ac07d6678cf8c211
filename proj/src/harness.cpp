#include "swarm_dmpc/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "swarm_dmpc/planner.hpp"

namespace swarm_dmpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double seconds_since(const std::chrono::steady_clock::time_point& start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Eigen::VectorXd shift_central_solution(const Eigen::VectorXd& x, int num_agents,
                                       int horizon, const std::vector<int>& slack_dims) {
  const int block = horizon * kStageDim;
  Eigen::VectorXd out(x.size());
  for (int a = 0; a < num_agents; ++a) {
    out.segment(a * block, block) =
        shift_flat_trajectory(x.segment(a * block, block), horizon);
  }
  int at = num_agents * block;
  for (int dim : slack_dims) {
    if (dim > 1) {
      out.segment(at, dim - 1) = x.segment(at + 1, dim - 1);
      out[at + dim - 1] = x[at + dim - 1];
    } else if (dim == 1) {
      out[at] = x[at];
    }
    at += dim;
  }
  return out;
}

}  // namespace

TimingStats timing_stats(const std::vector<double>& samples) {
  TimingStats stats;
  stats.count = static_cast<long>(samples.size());
  if (samples.empty()) return stats;
  stats.avg = std::accumulate(samples.begin(), samples.end(), 0.0) / samples.size();
  double var = 0.0;
  for (double v : samples) var += (v - stats.avg) * (v - stats.avg);
  stats.stddev = std::sqrt(var / samples.size());
  return stats;
}

double RunResult::min_obstacle_h() const {
  double lo = kInf;
  for (const auto& s : steps) {
    for (const auto& a : s.agents) lo = std::min(lo, a.h_obs);
  }
  return lo;
}

double RunResult::min_interagent_h() const {
  double lo = kInf;
  for (const auto& s : steps) {
    for (const auto& [edge, h] : s.edge_h) lo = std::min(lo, h);
  }
  return lo;
}

double RunResult::total_objective() const {
  double sum = 0.0;
  for (const auto& s : steps) sum += s.plan_objective;
  return sum;
}

long RunResult::first_arrival_cycle(int agent) const {
  const Eigen::Vector2d goal = scenario.agents.at(agent).second.position();
  for (const auto& s : steps) {
    const Eigen::Vector2d pos = s.agents.at(agent).state.head<2>();
    if ((pos - goal).norm() <= scenario.goal_tolerance.position) return s.cycle;
  }
  return -1;
}

RunResult run(const Scenario& scenario) {
  {
    const auto violations = validate_scenario(scenario);
    if (!violations.empty()) {
      std::ostringstream msg;
      msg << "scenario rejected:";
      for (const auto& v : violations) msg << "\n  - " << v;
      throw std::invalid_argument(msg.str());
    }
  }

  const int num_agents = scenario.num_agents();
  const int n = scenario.horizon;
  const int block = n * kStageDim;

  QpSettings loop_settings = scenario.qp;
  loop_settings.polish = false;
  loop_settings.adaptive_rho = true;
  loop_settings.validate_cost = false;
  loop_settings.warm_start.reset();

  std::vector<AgentState> plant;
  plant.reserve(num_agents);
  for (const auto& [start, goal] : scenario.agents) plant.push_back(start);

  // Cycle-0 bootstrap: a decoupled reference-tracking solve at the stationary
  // linearization gives the initial operating points and consensus copies.
  // Cost matrices are validated here, once per run.
  std::vector<ReferenceTrajectory> refs(num_agents);
  std::vector<AgentTrajectory> op(num_agents);
  std::vector<Eigen::VectorXd> xi0(num_agents);
  for (int i = 0; i < num_agents; ++i) {
    refs[i] = bezier_reference(plant[i], scenario.agents[i].second, n);
    const AgentTrajectory hold = AgentTrajectory::hold(plant[i], n);
    const QpProblem local =
        build_local_qp(plant[i], hold, refs[i], scenario.obstacles, scenario.weights,
                       scenario.bounds, scenario.safety, scenario.ts,
                       scenario.obstacle_activation_radius);
    QpSettings init_settings = loop_settings;
    init_settings.validate_cost = true;
    QpSolver solver(local, init_settings);
    const QpSolution sol = solver.solve();
    xi0[i] = sol.status == QpStatus::PrimalInfeasible ? hold.flatten() : sol.x;
    op[i] = AgentTrajectory::unflatten(xi0[i], 0);
  }

  ConsensusEngine engine(scenario.graph, scenario.admm, n, loop_settings);
  if (scenario.solver == SolverMode::Distributed) engine.initialize(xi0);

  std::vector<std::optional<AgentTrajectory>> prev_plans(num_agents);
  Eigen::VectorXd prev_central;
  std::vector<int> central_slack_dims;
  for (const auto& edge : scenario.graph.edges) {
    (void)edge;
    central_slack_dims.push_back(scenario.edge_cbf == EdgeCbfMode::AllSteps ? n : 1);
  }

  RunResult result;
  result.scenario = scenario;
  result.steps.reserve(scenario.duration);

  for (long t = 0; t < scenario.duration; ++t) {
    const auto cycle_start = std::chrono::steady_clock::now();
    const std::vector<AgentState> measured = plant;

    if (t > 0) {
      for (int i = 0; i < num_agents; ++i) {
        refs[i] = bezier_reference(measured[i], scenario.agents[i].second, n);
        op[i] = prev_plans[i]->shifted();
      }
      if (scenario.solver == SolverMode::Distributed) engine.shift_state();
    }

    std::vector<QpProblem> local_qps(num_agents);
    for (int i = 0; i < num_agents; ++i) {
      local_qps[i] =
          build_local_qp(measured[i], op[i], refs[i], scenario.obstacles,
                         scenario.weights, scenario.bounds, scenario.safety,
                         scenario.ts, scenario.obstacle_activation_radius);
    }

    StepLog log;
    log.cycle = t;
    std::vector<AgentTrajectory> plans(num_agents);
    std::vector<bool> degraded(num_agents, false);

    switch (scenario.solver) {
      case SolverMode::Distributed: {
        std::vector<EdgeProblemInput> edge_inputs;
        edge_inputs.reserve(scenario.graph.edges.size());
        for (const auto& [i, j] : scenario.graph.edges) {
          TrajectoryLayout li{n, 0, 2 * block};
          TrajectoryLayout lj{n, block, 2 * block};
          EdgeSet set = build_edge_set(measured[i], op[i], measured[j], op[j],
                                       scenario.safety, scenario.edge_cbf, li, lj);
          edge_inputs.push_back({std::move(set.psi_rows), scenario.weights.phi_weight});
        }
        CycleResult cr = engine.run_cycle(local_qps, edge_inputs, t);
        for (int i = 0; i < num_agents; ++i) {
          degraded[i] = cr.degraded[i];
          plans[i] = AgentTrajectory::unflatten(cr.trajectories[i], t);
        }
        log.residuals = std::move(cr.residuals);
        log.admm_iterations = cr.iterations;
        log.node_qp_count = cr.node_qp_count;
        log.edge_qp_count = cr.edge_qp_count;
        log.node_qp_seconds = std::move(cr.timings.node_qp_seconds);
        log.edge_qp_seconds = std::move(cr.timings.edge_qp_seconds);
        break;
      }
      case SolverMode::Centralized: {
        std::vector<AgentTrajectory> ops = op;
        std::vector<AgentState> x0s = measured;
        QpProblem central = build_centralized_qp(
            x0s, ops, refs, scenario.obstacles, scenario.graph.edges, scenario.weights,
            scenario.bounds, scenario.safety, scenario.ts, scenario.edge_cbf,
            scenario.obstacle_activation_radius);
        QpSettings cs = loop_settings;
        cs.validate_cost = (t == 0);
        QpSolver solver(std::move(central), cs);
        if (prev_central.size() == solver.problem().num_vars()) {
          solver.warm_start(
              shift_central_solution(prev_central, num_agents, n, central_slack_dims));
        }
        const QpSolution sol = solver.solve();
        if (sol.status == QpStatus::PrimalInfeasible) {
          for (int i = 0; i < num_agents; ++i) degraded[i] = true;
        } else {
          prev_central = sol.x;
          for (int i = 0; i < num_agents; ++i) {
            plans[i] = AgentTrajectory::unflatten(sol.x.segment(i * block, block), t);
          }
        }
        break;
      }
      case SolverMode::Decoupled: {
        for (int i = 0; i < num_agents; ++i) {
          QpSolver solver(local_qps[i], loop_settings);
          const auto qp_start = std::chrono::steady_clock::now();
          if (prev_plans[i].has_value()) solver.warm_start(op[i].flatten());
          const QpSolution sol = solver.solve();
          log.node_qp_seconds.push_back(seconds_since(qp_start));
          ++log.node_qp_count;
          if (sol.status == QpStatus::PrimalInfeasible) {
            degraded[i] = true;
          } else {
            plans[i] = AgentTrajectory::unflatten(sol.x, t);
          }
        }
        break;
      }
    }

    for (int i = 0; i < num_agents; ++i) {
      if (degraded[i]) plans[i] = fallback_plan(prev_plans[i], measured[i], n);
      plans[i].stamp = t;
    }
    log.cycle_seconds = seconds_since(cycle_start);

    log.agents.resize(num_agents);
    for (int i = 0; i < num_agents; ++i) {
      auto& rec = log.agents[i];
      rec.state = measured[i].vec();
      rec.input = plans[i].inputs.front().vec();
      rec.plan = plans[i];
      rec.degraded = degraded[i];
      rec.h_obs = kInf;
      for (const auto& o : scenario.obstacles) {
        rec.h_obs = std::min(rec.h_obs, h_obstacle(measured[i], o, scenario.safety));
      }
      for (const auto& d : scenario.disturbances) {
        if (d.agent == i && d.start_cycle <= t && t <= d.end_cycle) rec.pushed = true;
      }
      log.plan_objective += plan_cost(plans[i], refs[i], scenario.weights);
    }
    for (const auto& [i, j] : scenario.graph.edges) {
      log.edge_h[{i, j}] = h_interagent(measured[i], measured[j], scenario.safety);
    }

    for (int i = 0; i < num_agents; ++i) {
      plant[i] = step(measured[i], plans[i].inputs.front(), scenario.ts);
    }
    for (const auto& d : scenario.disturbances) {
      if (d.start_cycle <= t && t <= d.end_cycle) {
        const AgentState& x = plant[d.agent];
        plant[d.agent] =
            AgentState(x.px + d.delta[0], x.py + d.delta[1], x.theta + d.delta[2]);
      }
    }
    for (int i = 0; i < num_agents; ++i) prev_plans[i] = plans[i];
    result.steps.push_back(std::move(log));
  }

  result.final_states = plant;
  return result;
}

ComparisonReport compare(const Scenario& base) {
  Scenario distributed = base;
  distributed.solver = SolverMode::Distributed;
  Scenario centralized = base;
  centralized.solver = SolverMode::Centralized;

  const RunResult rd = run(distributed);
  const RunResult rc = run(centralized);

  ComparisonReport report;
  std::vector<double> node_times, edge_times, admm_cycles, central_cycles;
  long total_iterations = 0, total_node = 0, total_edge = 0;
  for (const auto& s : rd.steps) {
    node_times.insert(node_times.end(), s.node_qp_seconds.begin(), s.node_qp_seconds.end());
    edge_times.insert(edge_times.end(), s.edge_qp_seconds.begin(), s.edge_qp_seconds.end());
    admm_cycles.push_back(s.cycle_seconds);
    total_iterations += s.admm_iterations;
    total_node += s.node_qp_count;
    total_edge += s.edge_qp_count;
  }
  for (const auto& s : rc.steps) central_cycles.push_back(s.cycle_seconds);

  report.node_qp = timing_stats(node_times);
  report.edge_qp = timing_stats(edge_times);
  report.admm_cycle = timing_stats(admm_cycles);
  report.centralized_cycle = timing_stats(central_cycles);
  if (total_iterations > 0) {
    report.node_qps_per_iteration = static_cast<int>(total_node / total_iterations);
    report.edge_qps_per_iteration = static_cast<int>(total_edge / total_iterations);
  }

  const size_t cycles = std::min(rd.steps.size(), rc.steps.size());
  for (size_t t = 0; t < cycles; ++t) {
    for (size_t i = 0; i < rd.steps[t].agents.size(); ++i) {
      const double dev = (rd.steps[t].agents[i].state.head<2>() -
                          rc.steps[t].agents[i].state.head<2>())
                             .norm();
      report.max_position_deviation = std::max(report.max_position_deviation, dev);
    }
  }
  report.objective_distributed = rd.total_objective();
  report.objective_centralized = rc.total_objective();
  report.objective_gap =
      std::abs(report.objective_distributed - report.objective_centralized) /
      std::max(std::abs(report.objective_centralized), 1e-12);
  report.min_h_obs_distributed = rd.min_obstacle_h();
  report.min_h_edge_distributed = rd.min_interagent_h();
  report.min_h_obs_centralized = rc.min_obstacle_h();
  report.min_h_edge_centralized = rc.min_interagent_h();
  return report;
}

nlohmann::json ComparisonReport::to_json() const {
  auto stats = [](const TimingStats& s) {
    return nlohmann::json{{"avg_ms", s.avg * 1e3}, {"std_ms", s.stddev * 1e3},
                          {"count", s.count}};
  };
  nlohmann::json j;
  j["node_update_qp"] = stats(node_qp);
  j["edge_update_qp"] = stats(edge_qp);
  j["total_admm"] = stats(admm_cycle);
  j["total_centralized"] = stats(centralized_cycle);
  j["node_qps_per_iteration"] = node_qps_per_iteration;
  j["edge_qps_per_iteration"] = edge_qps_per_iteration;
  j["max_position_deviation_m"] = max_position_deviation;
  j["objective_distributed"] = objective_distributed;
  j["objective_centralized"] = objective_centralized;
  j["objective_gap"] = objective_gap;
  j["min_h_obs_distributed"] = min_h_obs_distributed;
  j["min_h_edge_distributed"] = min_h_edge_distributed;
  j["min_h_obs_centralized"] = min_h_obs_centralized;
  j["min_h_edge_centralized"] = min_h_edge_centralized;
  return j;
}

namespace {

nlohmann::json step_to_json(const StepLog& s) {
  nlohmann::json j;
  j["cycle"] = s.cycle;
  j["agents"] = nlohmann::json::array();
  for (const auto& a : s.agents) {
    nlohmann::json ja;
    ja["state"] = {a.state[0], a.state[1], a.state[2]};
    ja["input"] = {a.input[0], a.input[1]};
    ja["h_obs"] = std::isfinite(a.h_obs) ? nlohmann::json(a.h_obs) : nlohmann::json(nullptr);
    ja["degraded"] = a.degraded;
    ja["pushed"] = a.pushed;
    nlohmann::json states = nlohmann::json::array();
    for (const auto& x : a.plan.states) states.push_back({x.px, x.py, x.theta});
    nlohmann::json inputs = nlohmann::json::array();
    for (const auto& u : a.plan.inputs) inputs.push_back({u.v, u.omega});
    ja["plan"] = {{"stamp", a.plan.stamp}, {"states", states}, {"inputs", inputs}};
    j["agents"].push_back(std::move(ja));
  }
  j["edges"] = nlohmann::json::array();
  for (const auto& [edge, h] : s.edge_h) {
    j["edges"].push_back({{"i", edge.first}, {"j", edge.second}, {"h", h}});
  }
  j["residuals"] = nlohmann::json::array();
  for (const auto& r : s.residuals) {
    j["residuals"].push_back({{"primal", r.primal}, {"dual", r.dual}});
  }
  j["iterations"] = s.admm_iterations;
  j["node_qps"] = s.node_qp_count;
  j["edge_qps"] = s.edge_qp_count;
  j["objective"] = s.plan_objective;
  return j;
}

}  // namespace

void write_jsonl_log(const RunResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  for (const auto& s : result.steps) out << step_to_json(s).dump() << "\n";
}

void write_trajectory_csv(const RunResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "cycle,agent,px,py,theta,v,omega,h_obs,h_edge_min\n";
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const auto& s : result.steps) {
    for (size_t i = 0; i < s.agents.size(); ++i) {
      const auto& a = s.agents[i];
      double h_edge = kInf;
      for (const auto& [edge, h] : s.edge_h) {
        if (edge.first == static_cast<int>(i) || edge.second == static_cast<int>(i)) {
          h_edge = std::min(h_edge, h);
        }
      }
      out << s.cycle << "," << i << "," << fmt(a.state[0]) << "," << fmt(a.state[1])
          << "," << fmt(a.state[2]) << "," << fmt(a.input[0]) << "," << fmt(a.input[1])
          << "," << fmt(a.h_obs) << "," << fmt(h_edge) << "\n";
    }
  }
}

void write_timings_json(const RunResult& result, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  j["cycles"] = nlohmann::json::array();
  std::vector<double> totals;
  for (const auto& s : result.steps) {
    j["cycles"].push_back({{"cycle", s.cycle},
                           {"node_qp_seconds", s.node_qp_seconds},
                           {"edge_qp_seconds", s.edge_qp_seconds},
                           {"total_seconds", s.cycle_seconds}});
    totals.push_back(s.cycle_seconds);
  }
  const TimingStats stats = timing_stats(totals);
  j["summary"] = {{"cycle_avg_ms", stats.avg * 1e3},
                  {"cycle_std_ms", stats.stddev * 1e3},
                  {"cycles", stats.count}};
  out << j.dump(2) << "\n";
}

}  // namespace swarm_dmpc
