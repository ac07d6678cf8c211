#include "swarm_dmpc/dynamics.hpp"

#include <cmath>
#include <stdexcept>

namespace swarm_dmpc {

double wrap_angle(double a) {
  double r = std::fmod(a + M_PI, 2.0 * M_PI);
  if (r <= 0.0) r += 2.0 * M_PI;
  return r - M_PI;
}

namespace {

void require_finite(double value, const char* what) {
  if (!std::isfinite(value)) {
    throw std::invalid_argument(std::string("non-finite ") + what);
  }
}

}  // namespace

AgentState::AgentState(double px_, double py_, double theta_)
    : px(px_), py(py_), theta(wrap_angle(theta_)) {
  require_finite(px_, "px");
  require_finite(py_, "py");
  require_finite(theta_, "theta");
}

Eigen::VectorXd AgentTrajectory::flatten() const {
  const int n = horizon();
  Eigen::VectorXd xi(n * kStageDim);
  for (int k = 0; k < n; ++k) {
    xi.segment<kStateDim>(k * kStateDim) = states[k].vec();
    xi.segment<kInputDim>(n * kStateDim + k * kInputDim) = inputs[k].vec();
  }
  return xi;
}

AgentTrajectory AgentTrajectory::unflatten(const Eigen::VectorXd& xi, long stamp) {
  if (xi.size() % kStageDim != 0) {
    throw std::invalid_argument("flattened trajectory length not a multiple of 5");
  }
  const int n = static_cast<int>(xi.size()) / kStageDim;
  AgentTrajectory traj;
  traj.stamp = stamp;
  traj.states.reserve(n);
  traj.inputs.reserve(n);
  for (int k = 0; k < n; ++k) {
    traj.states.push_back(AgentState::from_vec(xi.segment<kStateDim>(k * kStateDim)));
    const auto u = xi.segment<kInputDim>(n * kStateDim + k * kInputDim);
    traj.inputs.push_back(ControlInput{u[0], u[1]});
  }
  return traj;
}

AgentTrajectory AgentTrajectory::shifted() const {
  AgentTrajectory out;
  out.stamp = stamp + 1;
  const int n = horizon();
  out.states.reserve(n);
  out.inputs.reserve(n);
  for (int k = 1; k < n; ++k) out.states.push_back(states[k]);
  out.states.push_back(states.back());
  for (int k = 1; k < n; ++k) out.inputs.push_back(inputs[k]);
  out.inputs.push_back(inputs.back());
  return out;
}

AgentTrajectory AgentTrajectory::hold(const AgentState& x, int n, long stamp) {
  AgentTrajectory traj;
  traj.stamp = stamp;
  traj.states.assign(n, x);
  traj.inputs.assign(n, ControlInput{});
  return traj;
}

AgentState step(const AgentState& x, const ControlInput& u, double ts) {
  if (ts <= 0.0) throw std::invalid_argument("ts must be positive");
  require_finite(x.px, "px");
  require_finite(x.py, "py");
  require_finite(x.theta, "theta");
  require_finite(u.v, "v");
  require_finite(u.omega, "omega");
  return AgentState(x.px + ts * u.v * std::cos(x.theta),
                    x.py + ts * u.v * std::sin(x.theta),
                    x.theta + ts * u.omega);
}

LinearizedDynamics linearize_at(const Eigen::Vector3d& x, const Eigen::Vector2d& u, double ts) {
  if (ts <= 0.0) throw std::invalid_argument("ts must be positive");
  if (!x.allFinite() || !u.allFinite()) throw std::invalid_argument("non-finite operating point");
  const double c = std::cos(x[2]);
  const double s = std::sin(x[2]);
  LinearizedDynamics lin;
  lin.A << 1.0, 0.0, -ts * u[0] * s,
           0.0, 1.0,  ts * u[0] * c,
           0.0, 0.0,  1.0;
  lin.B << ts * c, 0.0,
           ts * s, 0.0,
           0.0,    ts;
  // c makes the affine model exact at the operating point. The next state's
  // theta is kept unwrapped here so A x + B u + c reproduces the Euler step
  // before wrapping.
  Eigen::Vector3d next(x[0] + ts * u[0] * c, x[1] + ts * u[0] * s, x[2] + ts * u[1]);
  lin.c = next - lin.A * x - lin.B * u;
  return lin;
}

LinearizedDynamics linearize(const AgentState& x, const ControlInput& u, double ts) {
  return linearize_at(x.vec(), u.vec(), ts);
}

std::vector<AgentState> rollout(const AgentState& x0,
                                const std::vector<ControlInput>& inputs, double ts) {
  std::vector<AgentState> states;
  states.reserve(inputs.size());
  AgentState x = x0;
  for (const auto& u : inputs) {
    x = step(x, u, ts);
    states.push_back(x);
  }
  return states;
}

ReferenceTrajectory bezier_reference(const AgentState& x0, const AgentState& goal, int n) {
  if (n < 1) throw std::invalid_argument("reference horizon must be >= 1");
  const Eigen::Vector2d p0 = x0.position();
  const Eigen::Vector2d p3 = goal.position();
  const double d = (p3 - p0).norm();
  const Eigen::Vector2d h0(std::cos(x0.theta), std::sin(x0.theta));
  const Eigen::Vector2d h3(std::cos(goal.theta), std::sin(goal.theta));
  const Eigen::Vector2d p1 = p0 + (d / 3.0) * h0;
  const Eigen::Vector2d p2 = p3 - (d / 3.0) * h3;

  constexpr double kTangentEps = 1e-12;
  ReferenceTrajectory ref;
  ref.samples.reserve(n + 1);
  ref.samples.push_back(x0);
  for (int k = 1; k <= n; ++k) {
    const double tau = static_cast<double>(k) / n;
    const double w = 1.0 - tau;
    const Eigen::Vector2d pos = w * w * w * p0 + 3.0 * w * w * tau * p1 +
                                3.0 * w * tau * tau * p2 + tau * tau * tau * p3;
    const Eigen::Vector2d tan = 3.0 * (w * w * (p1 - p0) + 2.0 * w * tau * (p2 - p1) +
                                       tau * tau * (p3 - p2));
    const double heading = tan.norm() > kTangentEps ? std::atan2(tan.y(), tan.x()) : goal.theta;
    if (k == n) {
      ref.samples.emplace_back(p3.x(), p3.y(), heading);
    } else {
      ref.samples.emplace_back(pos.x(), pos.y(), heading);
    }
  }
  return ref;
}

}  // namespace swarm_dmpc
