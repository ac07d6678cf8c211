#ifndef SWARM_DMPC_DYNAMICS_HPP
#define SWARM_DMPC_DYNAMICS_HPP

#include <Eigen/Dense>
#include <vector>

namespace swarm_dmpc {

inline constexpr int kStateDim = 3;  // (px, py, theta)
inline constexpr int kInputDim = 2;  // (v, omega)
inline constexpr int kStageDim = kStateDim + kInputDim;

/// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

/// Planar pose of one agent. theta is always stored wrapped to (-pi, pi].
struct AgentState {
  double px = 0.0;
  double py = 0.0;
  double theta = 0.0;

  AgentState() = default;
  AgentState(double px_, double py_, double theta_);

  Eigen::Vector2d position() const { return {px, py}; }
  Eigen::Vector3d vec() const { return {px, py, theta}; }
  static AgentState from_vec(const Eigen::Vector3d& v) { return {v[0], v[1], v[2]}; }
};

/// Forward and angular velocity command.
struct ControlInput {
  double v = 0.0;
  double omega = 0.0;

  Eigen::Vector2d vec() const { return {v, omega}; }
};

/// Predicted state-input trajectory over the horizon: states x_{t+1..t+N},
/// inputs u_{t..t+N-1}. Flattening order is fixed: all states first
/// (time-major), then all inputs (time-major), total N*(3+2).
struct AgentTrajectory {
  std::vector<AgentState> states;
  std::vector<ControlInput> inputs;
  long stamp = 0;

  int horizon() const { return static_cast<int>(inputs.size()); }

  Eigen::VectorXd flatten() const;
  static AgentTrajectory unflatten(const Eigen::VectorXd& xi, long stamp = 0);

  /// Receding-horizon warm-start shift: drop the first step, repeat the last.
  AgentTrajectory shifted() const;

  /// Stationary trajectory: N copies of x, zero inputs.
  static AgentTrajectory hold(const AgentState& x, int n, long stamp = 0);
};

/// Index map into a flattened decision vector that embeds one agent's
/// trajectory block at `offset`. State step k runs 1..N (x_{t|t} is not a
/// decision variable), input step k runs 0..N-1.
struct TrajectoryLayout {
  int horizon = 0;
  int offset = 0;
  int total_dim = 0;

  int state_index(int k, int coord) const { return offset + (k - 1) * kStateDim + coord; }
  int input_index(int k, int coord) const {
    return offset + horizon * kStateDim + k * kInputDim + coord;
  }
  int block_dim() const { return horizon * kStageDim; }
};

/// Affine model x_{k+1} ~ A x_k + B u_k + c, exact at the linearization point.
struct LinearizedDynamics {
  Eigen::Matrix3d A;
  Eigen::Matrix<double, 3, 2> B;
  Eigen::Vector3d c;
};

/// N+1 desired poses; samples[0] is the state the reference was generated from.
struct ReferenceTrajectory {
  std::vector<AgentState> samples;
};

/// One Euler step of the kinematic unicycle.
AgentState step(const AgentState& x, const ControlInput& u, double ts);

/// Analytic Jacobians of `step` plus the affine residual c = f(x,u) - A x - B u.
LinearizedDynamics linearize(const AgentState& x, const ControlInput& u, double ts);

/// Same as `linearize` but takes a raw state vector whose theta may live
/// outside (-pi, pi]. Used when building QPs over an unwrapped heading
/// sequence so consecutive horizon steps stay 2*pi-consistent.
LinearizedDynamics linearize_at(const Eigen::Vector3d& x, const Eigen::Vector2d& u, double ts);

/// Iterated `step`; returns the N states visited after applying each input.
std::vector<AgentState> rollout(const AgentState& x0,
                                const std::vector<ControlInput>& inputs, double ts);

/// Cubic Bezier from x0's position to the goal position, interior control
/// points a third of the endpoint distance along the start and goal headings.
/// Sampled at n+1 uniform parameter values; headings follow the curve tangent
/// (goal heading where the tangent degenerates).
ReferenceTrajectory bezier_reference(const AgentState& x0, const AgentState& goal, int n);

}  // namespace swarm_dmpc

#endif  // SWARM_DMPC_DYNAMICS_HPP
