#ifndef SWARM_DMPC_SAFETY_HPP
#define SWARM_DMPC_SAFETY_HPP

#include <Eigen/Dense>
#include <optional>
#include <utility>
#include <vector>

#include "swarm_dmpc/dynamics.hpp"

namespace swarm_dmpc {

/// Static circular obstacle, represented by its center.
struct Obstacle {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
};

/// Safety margin and the slope of the linear class-K function alpha(s) = alpha_slope * s.
struct SafetyParams {
  double d_th = 0.5;
  double alpha_slope = 0.3;
};

enum class ConstraintSense { GreaterEqual, Equal };

/// One sparse affine row over a flattened decision vector:
///   sum_i coeffs[i].second * x[coeffs[i].first]  (sense)  rhs
struct AffineConstraintRow {
  std::vector<std::pair<int, double>> coeffs;
  double rhs = 0.0;
  ConstraintSense sense = ConstraintSense::GreaterEqual;
  bool degenerate_gradient = false;

  double value(const Eigen::VectorXd& x) const;
};

/// Distance of the agent's planar position to the obstacle center, minus d_th.
double h_obstacle(const AgentState& x, const Obstacle& o, const SafetyParams& p);

/// Pairwise center distance minus d_th.
double h_interagent(const AgentState& xi, const AgentState& xj, const SafetyParams& p);

/// Linearized obstacle CBF conditions h_{k+1} >= (1 - alpha) h_k for
/// k = 0..N-1, with h replaced by its first-order expansion around the
/// operating trajectory. x0 is the known current state (step k = 0), folded
/// into the right-hand side. Rows index into `layout`'s decision block.
std::vector<AffineConstraintRow> obstacle_cbf_rows(const AgentState& x0,
                                                   const AgentTrajectory& op,
                                                   const Obstacle& o,
                                                   const SafetyParams& p,
                                                   const TrajectoryLayout& layout);

/// Linearized inter-agent CBF conditions over the joint (xi, xj) layout.
/// `fallback_direction` replaces the gradient when the operating positions are
/// closer than 1e-6 m (the true gradient is undefined there); such rows carry
/// the degenerate flag.
std::vector<AffineConstraintRow> interagent_cbf_rows(
    const AgentState& x0_i, const AgentTrajectory& op_i,
    const AgentState& x0_j, const AgentTrajectory& op_j,
    const SafetyParams& p, const TrajectoryLayout& layout_i,
    const TrajectoryLayout& layout_j,
    const std::optional<Eigen::Vector2d>& fallback_direction = std::nullopt);

}  // namespace swarm_dmpc

#endif  // SWARM_DMPC_SAFETY_HPP
