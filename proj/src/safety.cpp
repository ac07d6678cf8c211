#include "swarm_dmpc/safety.hpp"

#include <cmath>
#include <stdexcept>

namespace swarm_dmpc {

namespace {

constexpr double kDegenerateSeparation = 1e-6;
constexpr double kCoeffDropTol = 1e-12;

void push_coeff(AffineConstraintRow& row, int index, double value) {
  if (std::abs(value) > kCoeffDropTol) row.coeffs.emplace_back(index, value);
}

}  // namespace

double AffineConstraintRow::value(const Eigen::VectorXd& x) const {
  double acc = 0.0;
  for (const auto& [idx, c] : coeffs) acc += c * x[idx];
  return acc;
}

double h_obstacle(const AgentState& x, const Obstacle& o, const SafetyParams& p) {
  return (x.position() - o.center).norm() - p.d_th;
}

double h_interagent(const AgentState& xi, const AgentState& xj, const SafetyParams& p) {
  return (xi.position() - xj.position()).norm() - p.d_th;
}

std::vector<AffineConstraintRow> obstacle_cbf_rows(const AgentState& x0,
                                                   const AgentTrajectory& op,
                                                   const Obstacle& o,
                                                   const SafetyParams& p,
                                                   const TrajectoryLayout& layout) {
  const int n = op.horizon();
  if (layout.horizon != n) throw std::invalid_argument("layout horizon mismatch");

  // h value, gradient and whether the gradient needed the fallback direction,
  // evaluated at operating state k (k = 0 is the known initial state).
  auto expand = [&](int k) {
    const Eigen::Vector2d pos = (k == 0) ? x0.position() : op.states[k - 1].position();
    const Eigen::Vector2d diff = pos - o.center;
    const double dist = diff.norm();
    Eigen::Vector2d grad(1.0, 0.0);
    bool degenerate = true;
    if (dist >= kDegenerateSeparation) {
      grad = diff / dist;
      degenerate = false;
    }
    return std::tuple<double, Eigen::Vector2d, bool>(dist - p.d_th, grad, degenerate);
  };

  const double keep = 1.0 - p.alpha_slope;
  std::vector<AffineConstraintRow> rows;
  rows.reserve(n);
  for (int k = 0; k < n; ++k) {
    const auto [h_k, g_k, degen_k] = expand(k);
    const auto [h_k1, g_k1, degen_k1] = expand(k + 1);
    const Eigen::Vector2d pbar_k = (k == 0) ? x0.position() : op.states[k - 1].position();
    const Eigen::Vector2d pbar_k1 = op.states[k].position();

    // hhat_{k+1}(x) - (1-alpha) hhat_k(x) >= 0 rearranged into coeffs * x >= rhs.
    AffineConstraintRow row;
    row.degenerate_gradient = degen_k || degen_k1;
    double rhs = -(h_k1 - g_k1.dot(pbar_k1)) + keep * (h_k - g_k.dot(pbar_k));
    push_coeff(row, layout.state_index(k + 1, 0), g_k1.x());
    push_coeff(row, layout.state_index(k + 1, 1), g_k1.y());
    if (k == 0) {
      rhs += keep * g_k.dot(x0.position());
    } else {
      push_coeff(row, layout.state_index(k, 0), -keep * g_k.x());
      push_coeff(row, layout.state_index(k, 1), -keep * g_k.y());
    }
    row.rhs = rhs;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<AffineConstraintRow> interagent_cbf_rows(
    const AgentState& x0_i, const AgentTrajectory& op_i,
    const AgentState& x0_j, const AgentTrajectory& op_j,
    const SafetyParams& p, const TrajectoryLayout& layout_i,
    const TrajectoryLayout& layout_j,
    const std::optional<Eigen::Vector2d>& fallback_direction) {
  const int n = op_i.horizon();
  if (op_j.horizon() != n) throw std::invalid_argument("operating horizons differ");
  if (layout_i.horizon != n || layout_j.horizon != n) {
    throw std::invalid_argument("layout horizon mismatch");
  }

  auto position = [](const AgentState& x0, const AgentTrajectory& op, int k) {
    return (k == 0) ? x0.position() : op.states[k - 1].position();
  };
  auto expand = [&](int k) {
    const Eigen::Vector2d diff = position(x0_i, op_i, k) - position(x0_j, op_j, k);
    const double dist = diff.norm();
    Eigen::Vector2d grad = fallback_direction.value_or(Eigen::Vector2d(1.0, 0.0));
    bool degenerate = true;
    if (dist >= kDegenerateSeparation) {
      grad = diff / dist;
      degenerate = false;
    }
    return std::tuple<double, Eigen::Vector2d, bool>(dist - p.d_th, grad, degenerate);
  };

  const double keep = 1.0 - p.alpha_slope;
  std::vector<AffineConstraintRow> rows;
  rows.reserve(n);
  for (int k = 0; k < n; ++k) {
    const auto [h_k, g_k, degen_k] = expand(k);
    const auto [h_k1, g_k1, degen_k1] = expand(k + 1);
    const Eigen::Vector2d pi_k = position(x0_i, op_i, k);
    const Eigen::Vector2d pj_k = position(x0_j, op_j, k);
    const Eigen::Vector2d pi_k1 = position(x0_i, op_i, k + 1);
    const Eigen::Vector2d pj_k1 = position(x0_j, op_j, k + 1);

    AffineConstraintRow row;
    row.degenerate_gradient = degen_k || degen_k1;
    double rhs = -(h_k1 - g_k1.dot(pi_k1 - pj_k1)) + keep * (h_k - g_k.dot(pi_k - pj_k));
    push_coeff(row, layout_i.state_index(k + 1, 0), g_k1.x());
    push_coeff(row, layout_i.state_index(k + 1, 1), g_k1.y());
    push_coeff(row, layout_j.state_index(k + 1, 0), -g_k1.x());
    push_coeff(row, layout_j.state_index(k + 1, 1), -g_k1.y());
    if (k == 0) {
      rhs += keep * g_k.dot(x0_i.position() - x0_j.position());
    } else {
      push_coeff(row, layout_i.state_index(k, 0), -keep * g_k.x());
      push_coeff(row, layout_i.state_index(k, 1), -keep * g_k.y());
      push_coeff(row, layout_j.state_index(k, 0), keep * g_k.x());
      push_coeff(row, layout_j.state_index(k, 1), keep * g_k.y());
    }
    row.rhs = rhs;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace swarm_dmpc
