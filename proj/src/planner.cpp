#include "swarm_dmpc/planner.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace swarm_dmpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Heading sequence over (x0, op) made 2*pi-continuous, starting at x0.theta.
std::vector<double> unwrap_headings(const AgentState& x0, const AgentTrajectory& op) {
  std::vector<double> theta(op.horizon() + 1);
  theta[0] = x0.theta;
  for (int k = 1; k <= op.horizon(); ++k) {
    const double raw = op.states[k - 1].theta;
    theta[k] = theta[k - 1] + wrap_angle(raw - theta[k - 1]);
  }
  return theta;
}

bool obstacle_active(const AgentState& x0, const AgentTrajectory& op, const Obstacle& o,
                     double radius) {
  if (radius <= 0.0) return true;
  if ((x0.position() - o.center).norm() <= radius) return true;
  for (const auto& s : op.states) {
    if ((s.position() - o.center).norm() <= radius) return true;
  }
  return false;
}

/// Writes one agent's tracking cost, dynamics equalities, obstacle CBF rows
/// and input bounds into the global containers at `layout`'s block.
void append_local_blocks(const AgentState& x0, const AgentTrajectory& op,
                         const ReferenceTrajectory& ref,
                         const std::vector<Obstacle>& obstacles,
                         const CostWeights& weights, const InputBounds& bounds,
                         const SafetyParams& safety, double ts, double act_radius,
                         const TrajectoryLayout& layout, Eigen::MatrixXd& h,
                         Eigen::VectorXd& f, std::vector<AffineConstraintRow>& eq_rows,
                         std::vector<AffineConstraintRow>& ineq_rows, Eigen::VectorXd& lb,
                         Eigen::VectorXd& ub) {
  const int n = op.horizon();
  if (n < 1) throw std::invalid_argument("operating point horizon must be >= 1");
  if (static_cast<int>(ref.samples.size()) != n + 1) {
    throw std::invalid_argument("reference must have N+1 samples");
  }
  if (static_cast<int>(op.states.size()) != n) {
    throw std::invalid_argument("operating point states/inputs length mismatch");
  }

  const std::vector<double> theta_op = unwrap_headings(x0, op);

  // tracking cost, stage k = 1..N-1 with Q, terminal with P, inputs with R
  for (int k = 1; k <= n; ++k) {
    const Eigen::Matrix3d& w = (k == n) ? weights.P : weights.Q;
    const double ref_theta =
        theta_op[k] + wrap_angle(ref.samples[k].theta - theta_op[k]);
    const Eigen::Vector3d target(ref.samples[k].px, ref.samples[k].py, ref_theta);
    const int at = layout.state_index(k, 0);
    h.block<3, 3>(at, at) += 2.0 * w;
    f.segment<3>(at) += -2.0 * w * target;
  }
  for (int k = 0; k < n; ++k) {
    const int at = layout.input_index(k, 0);
    h.block<2, 2>(at, at) += 2.0 * weights.R;
    lb[at] = bounds.v_min;
    ub[at] = bounds.v_max;
    lb[at + 1] = bounds.omega_min;
    ub[at + 1] = bounds.omega_max;
  }

  // dynamics equalities; x_{t|t} is folded into the k = 0 right-hand side
  const Eigen::Vector3d x0_vec(x0.px, x0.py, theta_op[0]);
  for (int k = 0; k < n; ++k) {
    const Eigen::Vector3d xbar = (k == 0)
        ? x0_vec
        : Eigen::Vector3d(op.states[k - 1].px, op.states[k - 1].py, theta_op[k]);
    const LinearizedDynamics lin = linearize_at(xbar, op.inputs[k].vec(), ts);
    const Eigen::Vector3d rhs = (k == 0) ? Eigen::Vector3d(lin.A * x0_vec + lin.c) : lin.c;
    for (int r = 0; r < kStateDim; ++r) {
      AffineConstraintRow row;
      row.sense = ConstraintSense::Equal;
      row.coeffs.emplace_back(layout.state_index(k + 1, r), 1.0);
      if (k > 0) {
        for (int c = 0; c < kStateDim; ++c) {
          if (lin.A(r, c) != 0.0) {
            row.coeffs.emplace_back(layout.state_index(k, c), -lin.A(r, c));
          }
        }
      }
      for (int c = 0; c < kInputDim; ++c) {
        if (lin.B(r, c) != 0.0) {
          row.coeffs.emplace_back(layout.input_index(k, c), -lin.B(r, c));
        }
      }
      row.rhs = rhs[r];
      eq_rows.push_back(std::move(row));
    }
  }

  for (const auto& o : obstacles) {
    if (!obstacle_active(x0, op, o, act_radius)) continue;
    auto rows = obstacle_cbf_rows(x0, op, o, safety, layout);
    ineq_rows.insert(ineq_rows.end(), rows.begin(), rows.end());
  }
}

}  // namespace

std::pair<Eigen::MatrixXd, Eigen::VectorXd> dense_rows(
    const std::vector<AffineConstraintRow>& rows, int num_cols) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<int>(rows.size()), num_cols);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<int>(rows.size()));
  for (size_t r = 0; r < rows.size(); ++r) {
    for (const auto& [idx, v] : rows[r].coeffs) a(static_cast<int>(r), idx) = v;
    b[static_cast<int>(r)] = rows[r].rhs;
  }
  return {std::move(a), std::move(b)};
}

QpProblem build_local_qp(const AgentState& x0, const AgentTrajectory& op,
                         const ReferenceTrajectory& ref,
                         const std::vector<Obstacle>& obstacles,
                         const CostWeights& weights, const InputBounds& bounds,
                         const SafetyParams& safety, double ts,
                         double obstacle_activation_radius) {
  const int n = op.horizon();
  const int dim = n * kStageDim;
  TrajectoryLayout layout{n, 0, dim};

  QpProblem qp;
  qp.H = Eigen::MatrixXd::Zero(dim, dim);
  qp.f = Eigen::VectorXd::Zero(dim);
  qp.lb = Eigen::VectorXd::Constant(dim, -kInf);
  qp.ub = Eigen::VectorXd::Constant(dim, kInf);
  std::vector<AffineConstraintRow> eq_rows, ineq_rows;
  append_local_blocks(x0, op, ref, obstacles, weights, bounds, safety, ts,
                      obstacle_activation_radius, layout, qp.H, qp.f, eq_rows,
                      ineq_rows, qp.lb, qp.ub);
  std::tie(qp.Aeq, qp.beq) = dense_rows(eq_rows, dim);
  std::tie(qp.Ain, qp.bin) = dense_rows(ineq_rows, dim);
  return qp;
}

EdgeSet build_edge_set(const AgentState& x0_i, const AgentTrajectory& op_i,
                       const AgentState& x0_j, const AgentTrajectory& op_j,
                       const SafetyParams& safety, EdgeCbfMode mode,
                       const TrajectoryLayout& layout_i,
                       const TrajectoryLayout& layout_j) {
  EdgeSet set;
  set.psi_rows = interagent_cbf_rows(x0_i, op_i, x0_j, op_j, safety, layout_i, layout_j);
  if (mode == EdgeCbfMode::FirstStep) {
    set.psi_rows.resize(1);
  }
  set.slack_dim = static_cast<int>(set.psi_rows.size());
  return set;
}

QpProblem build_centralized_qp(const std::vector<AgentState>& x0,
                               const std::vector<AgentTrajectory>& op,
                               const std::vector<ReferenceTrajectory>& refs,
                               const std::vector<Obstacle>& obstacles,
                               const std::vector<std::pair<int, int>>& edges,
                               const CostWeights& weights, const InputBounds& bounds,
                               const SafetyParams& safety, double ts, EdgeCbfMode mode,
                               double obstacle_activation_radius) {
  const int num_agents = static_cast<int>(x0.size());
  if (num_agents == 0) throw std::invalid_argument("no agents");
  if (op.size() != x0.size() || refs.size() != x0.size()) {
    throw std::invalid_argument("per-agent input sizes differ");
  }
  const int n = op[0].horizon();
  for (const auto& t : op) {
    if (t.horizon() != n) throw std::invalid_argument("agents share one horizon");
  }
  const int block = n * kStageDim;

  std::vector<EdgeSet> edge_sets;
  edge_sets.reserve(edges.size());
  int slack_total = 0;
  for (const auto& [i, j] : edges) {
    TrajectoryLayout li{n, i * block, 0};
    TrajectoryLayout lj{n, j * block, 0};
    edge_sets.push_back(
        build_edge_set(x0[i], op[i], x0[j], op[j], safety, mode, li, lj));
    slack_total += edge_sets.back().slack_dim;
  }

  const int dim = num_agents * block + slack_total;
  QpProblem qp;
  qp.H = Eigen::MatrixXd::Zero(dim, dim);
  qp.f = Eigen::VectorXd::Zero(dim);
  qp.lb = Eigen::VectorXd::Constant(dim, -kInf);
  qp.ub = Eigen::VectorXd::Constant(dim, kInf);
  std::vector<AffineConstraintRow> eq_rows, ineq_rows;

  for (int a = 0; a < num_agents; ++a) {
    TrajectoryLayout layout{n, a * block, dim};
    append_local_blocks(x0[a], op[a], refs[a], obstacles, weights, bounds, safety,
                        ts, obstacle_activation_radius, layout, qp.H, qp.f, eq_rows,
                        ineq_rows, qp.lb, qp.ub);
  }

  // slack relaxes the row one-sidedly; strictly satisfied rows cost nothing
  int slack_at = num_agents * block;
  for (const auto& set : edge_sets) {
    for (const auto& psi : set.psi_rows) {
      AffineConstraintRow row = psi;
      row.coeffs.emplace_back(slack_at, 1.0);
      ineq_rows.push_back(std::move(row));
      qp.H(slack_at, slack_at) = 2.0 * weights.phi_weight;
      qp.lb[slack_at] = 0.0;
      ++slack_at;
    }
  }

  std::tie(qp.Aeq, qp.beq) = dense_rows(eq_rows, dim);
  std::tie(qp.Ain, qp.bin) = dense_rows(ineq_rows, dim);
  return qp;
}

AgentTrajectory fallback_plan(const std::optional<AgentTrajectory>& last,
                              const AgentState& current, int horizon) {
  if (!last.has_value()) {
    return AgentTrajectory::hold(current, horizon);
  }
  AgentTrajectory plan = last->shifted();
  plan.inputs.back().v *= 0.5;
  return plan;
}

double plan_cost(const AgentTrajectory& plan, const ReferenceTrajectory& ref,
                 const CostWeights& weights) {
  const int n = plan.horizon();
  if (static_cast<int>(ref.samples.size()) != n + 1) {
    throw std::invalid_argument("reference must have N+1 samples");
  }
  double cost = 0.0;
  for (int k = 1; k <= n; ++k) {
    const Eigen::Matrix3d& w = (k == n) ? weights.P : weights.Q;
    Eigen::Vector3d err(plan.states[k - 1].px - ref.samples[k].px,
                        plan.states[k - 1].py - ref.samples[k].py,
                        wrap_angle(plan.states[k - 1].theta - ref.samples[k].theta));
    cost += err.dot(w * err);
  }
  for (const auto& u : plan.inputs) {
    cost += u.vec().dot(weights.R * u.vec());
  }
  return cost;
}

}  // namespace swarm_dmpc
