#ifndef SWARM_DMPC_PLANNER_HPP
#define SWARM_DMPC_PLANNER_HPP

#include <optional>
#include <utility>
#include <vector>

#include "swarm_dmpc/dynamics.hpp"
#include "swarm_dmpc/qp.hpp"
#include "swarm_dmpc/safety.hpp"

namespace swarm_dmpc {

/// Quadratic tracking weights. Defaults follow the usual diag{50,50,100} /
/// diag{50,10} stage weights with a 10x terminal weight and slack penalty 5.
struct CostWeights {
  Eigen::Matrix3d Q = Eigen::Vector3d(50.0, 50.0, 100.0).asDiagonal();
  Eigen::Matrix2d R = Eigen::Vector2d(50.0, 10.0).asDiagonal();
  Eigen::Matrix3d P = Eigen::Vector3d(500.0, 500.0, 1000.0).asDiagonal();
  double phi_weight = 5.0;
};

struct InputBounds {
  double v_min = -0.8;
  double v_max = 0.8;
  double omega_min = -1.5;
  double omega_max = 1.5;
};

/// Which horizon steps the inter-agent CBF condition is imposed at.
/// AllSteps uses one slack per step; FirstStep keeps a single scalar slack
/// and only the first-step condition (the 2*(3+2)N+1 variable count).
enum class EdgeCbfMode { AllSteps, FirstStep };

/// Affine inter-agent rows for one edge plus the slack dimension they need.
struct EdgeSet {
  std::vector<AffineConstraintRow> psi_rows;
  int slack_dim = 0;
};

/// Per-agent tracking QP over the flattened trajectory: quadratic reference
/// tracking cost subject to the local feasible set (linearized dynamics with
/// the initial state folded in, obstacle CBF rows, input bounds). Obstacles
/// farther than `obstacle_activation_radius` from every operating position
/// are skipped; a non-positive radius keeps all of them.
QpProblem build_local_qp(const AgentState& x0, const AgentTrajectory& op,
                         const ReferenceTrajectory& ref,
                         const std::vector<Obstacle>& obstacles,
                         const CostWeights& weights, const InputBounds& bounds,
                         const SafetyParams& safety, double ts,
                         double obstacle_activation_radius = 3.0);

/// Inter-agent CBF rows for one edge, indexed through the two layouts.
EdgeSet build_edge_set(const AgentState& x0_i, const AgentTrajectory& op_i,
                       const AgentState& x0_j, const AgentTrajectory& op_j,
                       const SafetyParams& safety, EdgeCbfMode mode,
                       const TrajectoryLayout& layout_i,
                       const TrajectoryLayout& layout_j);

/// The coupled problem over [xi_1 ... xi_nv, s_e1 ... s_em]: every agent's
/// local cost and feasible set, plus the per-edge inter-agent rows relaxed
/// by their nonnegative slacks.
QpProblem build_centralized_qp(const std::vector<AgentState>& x0,
                               const std::vector<AgentTrajectory>& op,
                               const std::vector<ReferenceTrajectory>& refs,
                               const std::vector<Obstacle>& obstacles,
                               const std::vector<std::pair<int, int>>& edges,
                               const CostWeights& weights, const InputBounds& bounds,
                               const SafetyParams& safety, double ts,
                               EdgeCbfMode mode,
                               double obstacle_activation_radius = 3.0);

/// Degraded-cycle plan: shift the previous plan, repeat the final input with
/// v halved. Without a previous plan, hold the current state at zero input.
AgentTrajectory fallback_plan(const std::optional<AgentTrajectory>& last,
                              const AgentState& current, int horizon);

/// Tracking cost of a plan against a reference (wrapped heading error);
/// the same quadratic the QPs minimize, evaluated directly.
double plan_cost(const AgentTrajectory& plan, const ReferenceTrajectory& ref,
                 const CostWeights& weights);

/// Densifies sparse affine rows into (A, b) with the given column count.
std::pair<Eigen::MatrixXd, Eigen::VectorXd> dense_rows(
    const std::vector<AffineConstraintRow>& rows, int num_cols);

}  // namespace swarm_dmpc

#endif  // SWARM_DMPC_PLANNER_HPP
