#ifndef SWARM_DMPC_HARNESS_HPP
#define SWARM_DMPC_HARNESS_HPP

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "swarm_dmpc/consensus.hpp"
#include "swarm_dmpc/scenario.hpp"

namespace swarm_dmpc {

/// One closed-loop cycle record. Timing fields are wall-clock measurements
/// and are written to the separate timings file, never to the deterministic
/// log; everything else is reproducible bit-for-bit for a given scenario.
struct StepLog {
  struct AgentRecord {
    Eigen::Vector3d state = Eigen::Vector3d::Zero();  // measured at cycle start
    Eigen::Vector2d input = Eigen::Vector2d::Zero();  // applied this cycle
    AgentTrajectory plan;
    double h_obs = 0.0;  // min over obstacles at the measured state
    bool degraded = false;
    bool pushed = false;
  };

  long cycle = 0;
  std::vector<AgentRecord> agents;
  std::map<std::pair<int, int>, double> edge_h;  // at measured states
  std::vector<AdmmResiduals> residuals;
  int admm_iterations = 0;
  int node_qp_count = 0;
  int edge_qp_count = 0;
  double plan_objective = 0.0;  // summed tracking cost of this cycle's plans

  // wall clock (excluded from the determinism contract)
  std::vector<double> node_qp_seconds;
  std::vector<double> edge_qp_seconds;
  double cycle_seconds = 0.0;
};

struct RunResult {
  Scenario scenario;
  std::vector<StepLog> steps;
  std::vector<AgentState> final_states;

  double min_obstacle_h() const;
  double min_interagent_h() const;
  double total_objective() const;
  /// First cycle whose measured state is within the position tolerance of the
  /// goal; -1 if never reached.
  long first_arrival_cycle(int agent) const;
};

/// Receding-horizon closed loop: regenerate references, linearize at the
/// shifted operating points, solve with the configured solver, apply the
/// first input plus any scheduled push. Throws std::invalid_argument when the
/// scenario fails validation.
RunResult run(const Scenario& scenario);

struct TimingStats {
  double avg = 0.0;
  double stddev = 0.0;
  long count = 0;
};

TimingStats timing_stats(const std::vector<double>& samples);

/// Same scenario under distributed and centralized solvers with identical
/// parameters, plus deviation/objective/margin comparisons.
struct ComparisonReport {
  TimingStats node_qp;            // distributed per-QP
  TimingStats edge_qp;            // distributed per-QP
  TimingStats admm_cycle;         // distributed per-cycle totals
  TimingStats centralized_cycle;  // centralized per-cycle totals
  int node_qps_per_iteration = 0;
  int edge_qps_per_iteration = 0;
  double max_position_deviation = 0.0;
  double objective_distributed = 0.0;
  double objective_centralized = 0.0;
  double objective_gap = 0.0;  // |Jd - Jc| / max(|Jc|, eps)
  double min_h_obs_distributed = 0.0;
  double min_h_edge_distributed = 0.0;
  double min_h_obs_centralized = 0.0;
  double min_h_edge_centralized = 0.0;

  nlohmann::json to_json() const;
};

ComparisonReport compare(const Scenario& base);

/// Deterministic JSON-lines log, one StepLog per line (no timing fields).
void write_jsonl_log(const RunResult& result, const std::string& path);

/// Deterministic CSV: cycle, agent, px, py, theta, v, omega, h_obs, h_edge_min.
void write_trajectory_csv(const RunResult& result, const std::string& path);

/// Wall-clock record, one object per cycle. Not covered by determinism.
void write_timings_json(const RunResult& result, const std::string& path);

}  // namespace swarm_dmpc

#endif  // SWARM_DMPC_HARNESS_HPP
