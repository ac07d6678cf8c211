#include "swarm_dmpc/consensus.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <stdexcept>

namespace swarm_dmpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double seconds_since(const std::chrono::steady_clock::time_point& start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

InteractionGraph InteractionGraph::complete(int n) {
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) edges.emplace_back(i, j);
  }
  return from_edges(n, std::move(edges));
}

InteractionGraph InteractionGraph::from_edges(int n, std::vector<std::pair<int, int>> edges) {
  if (n < 1) throw std::invalid_argument("graph needs at least one node");
  InteractionGraph g;
  g.num_nodes = n;
  std::set<std::pair<int, int>> seen;
  for (auto& [i, j] : edges) {
    if (i == j) throw std::invalid_argument("self loops are not allowed");
    if (i > j) std::swap(i, j);
    if (i < 0 || j >= n) throw std::invalid_argument("edge endpoint out of range");
    if (!seen.insert({i, j}).second) throw std::invalid_argument("duplicate edge");
  }
  g.edges.assign(seen.begin(), seen.end());
  g.neighbor_of.assign(n, {});
  for (const auto& [i, j] : g.edges) {
    g.neighbor_of[i].push_back(j);
    g.neighbor_of[j].push_back(i);
  }
  for (auto& nbrs : g.neighbor_of) std::sort(nbrs.begin(), nbrs.end());
  return g;
}

QpProblem build_node_qp(const QpProblem& local_qp,
                        const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& edge_terms,
                        double rho) {
  QpProblem qp = local_qp;
  const int n = qp.num_vars();
  for (const auto& [z, lambda] : edge_terms) {
    if (z.size() != n || lambda.size() != n) {
      throw std::invalid_argument("edge term dimension mismatch");
    }
    qp.H.diagonal().array() += rho;
    qp.f -= rho * (z - lambda);
  }
  return qp;
}

// The slack enters as pure constraint relaxation: row + s >= rhs with s >= 0,
// so a strictly satisfied row costs nothing and the penalty prices only the
// violation the row had to give. (Penalizing the full margin s = -psi would
// pull well-separated agents toward the safety boundary.)
QpProblem build_edge_qp(const std::vector<AffineConstraintRow>& psi_rows, int horizon,
                        const Eigen::VectorXd& target_i, const Eigen::VectorXd& target_j,
                        double phi_weight, double rho) {
  const int block = horizon * kStageDim;
  if (target_i.size() != block || target_j.size() != block) {
    throw std::invalid_argument("edge target dimension mismatch");
  }
  const int slack_dim = static_cast<int>(psi_rows.size());
  const int dim = 2 * block + slack_dim;

  QpProblem qp;
  qp.H = Eigen::MatrixXd::Zero(dim, dim);
  qp.H.diagonal().head(2 * block).array() = rho;
  qp.H.diagonal().tail(slack_dim).array() = 2.0 * phi_weight;
  qp.f = Eigen::VectorXd::Zero(dim);
  qp.f.head(block) = -rho * target_i;
  qp.f.segment(block, block) = -rho * target_j;
  qp.lb = Eigen::VectorXd::Constant(dim, -kInf);
  qp.ub = Eigen::VectorXd::Constant(dim, kInf);
  qp.lb.tail(slack_dim).setZero();

  qp.Ain = Eigen::MatrixXd::Zero(slack_dim, dim);
  qp.bin = Eigen::VectorXd::Zero(slack_dim);
  for (int r = 0; r < slack_dim; ++r) {
    for (const auto& [idx, v] : psi_rows[r].coeffs) {
      if (idx >= 2 * block) throw std::invalid_argument("psi row index out of range");
      qp.Ain(r, idx) = v;
    }
    qp.Ain(r, 2 * block + r) = 1.0;
    qp.bin[r] = psi_rows[r].rhs;
  }
  return qp;
}

Eigen::VectorXd node_update(const QpProblem& local_qp,
                            const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& edge_terms,
                            double rho, const QpSettings& settings) {
  const QpSolution sol = solve(build_node_qp(local_qp, edge_terms, rho), settings);
  if (sol.status == QpStatus::PrimalInfeasible) {
    throw std::runtime_error("node QP infeasible");
  }
  return sol.x;
}

std::tuple<Eigen::VectorXd, Eigen::VectorXd, Eigen::VectorXd> edge_update(
    const std::vector<AffineConstraintRow>& psi_rows, int horizon,
    const Eigen::VectorXd& xi_new, const Eigen::VectorXd& xj_new,
    const Eigen::VectorXd& lambda_i, const Eigen::VectorXd& lambda_j,
    double phi_weight, double rho, const QpSettings& settings) {
  const QpProblem qp =
      build_edge_qp(psi_rows, horizon, xi_new + lambda_i, xj_new + lambda_j, phi_weight, rho);
  const QpSolution sol = solve(qp, settings);
  if (sol.status == QpStatus::PrimalInfeasible) {
    throw std::runtime_error("edge QP infeasible despite slack");
  }
  const int block = horizon * kStageDim;
  return {sol.x.head(block), sol.x.segment(block, block),
          sol.x.tail(static_cast<int>(psi_rows.size()))};
}

Eigen::VectorXd dual_update(const Eigen::VectorXd& lambda, const Eigen::VectorXd& xi,
                            const Eigen::VectorXd& z) {
  return lambda + xi - z;
}

Eigen::VectorXd shift_flat_trajectory(const Eigen::VectorXd& xi, int horizon) {
  if (xi.size() != horizon * kStageDim) {
    throw std::invalid_argument("flattened trajectory dimension mismatch");
  }
  Eigen::VectorXd out(xi.size());
  const int sbase = 0;
  for (int k = 0; k + 1 < horizon; ++k) {
    out.segment<kStateDim>(sbase + k * kStateDim) =
        xi.segment<kStateDim>(sbase + (k + 1) * kStateDim);
  }
  out.segment<kStateDim>(sbase + (horizon - 1) * kStateDim) =
      xi.segment<kStateDim>(sbase + (horizon - 1) * kStateDim);
  const int ubase = horizon * kStateDim;
  for (int k = 0; k + 1 < horizon; ++k) {
    out.segment<kInputDim>(ubase + k * kInputDim) =
        xi.segment<kInputDim>(ubase + (k + 1) * kInputDim);
  }
  out.segment<kInputDim>(ubase + (horizon - 1) * kInputDim) =
      xi.segment<kInputDim>(ubase + (horizon - 1) * kInputDim);
  return out;
}

ConsensusEngine::ConsensusEngine(InteractionGraph graph, AdmmConfig config, int horizon,
                                 QpSettings qp_settings, Transport* transport,
                                 ThreadPool* pool)
    : graph_(std::move(graph)),
      config_(config),
      horizon_(horizon),
      qp_settings_(qp_settings) {
  if (config_.rho <= 0.0) throw std::invalid_argument("rho must be positive");
  if (config_.max_admm_iter < 1) throw std::invalid_argument("max_admm_iter must be >= 1");
  // internal QPs are assembled here; cost validation happens upstream on the
  // local problems once per run
  qp_settings_.validate_cost = false;
  qp_settings_.warm_start.reset();
  if (transport == nullptr) {
    owned_transport_ = std::make_unique<DirectTransport>(graph_.num_nodes);
    transport_ = owned_transport_.get();
  } else {
    transport_ = transport;
  }
  if (pool == nullptr) {
    owned_pool_ = std::make_unique<ThreadPool>(configured_thread_count());
    pool_ = owned_pool_.get();
  } else {
    pool_ = pool;
  }
}

void ConsensusEngine::initialize(const std::vector<Eigen::VectorXd>& xi0) {
  const int block = horizon_ * kStageDim;
  if (static_cast<int>(xi0.size()) != graph_.num_nodes) {
    throw std::invalid_argument("one initial trajectory per agent required");
  }
  for (const auto& xi : xi0) {
    if (xi.size() != block) throw std::invalid_argument("initial trajectory dimension");
  }
  xi_ = xi0;
  edge_state_.assign(graph_.num_nodes, {});
  for (const auto& [i, j] : graph_.edges) {
    PerEdge at_i;
    at_i.z_own = xi0[i];
    at_i.lambda_own = Eigen::VectorXd::Zero(block);
    at_i.lambda_peer = Eigen::VectorXd::Zero(block);  // owner-side replica
    edge_state_[i].emplace(j, std::move(at_i));

    PerEdge at_j;
    at_j.z_own = xi0[j];
    at_j.lambda_own = Eigen::VectorXd::Zero(block);
    edge_state_[j].emplace(i, std::move(at_j));
  }
  initialized_ = true;
}

void ConsensusEngine::shift_state() {
  for (auto& xi : xi_) xi = shift_flat_trajectory(xi, horizon_);
  for (auto& per_agent : edge_state_) {
    for (auto& [nbr, st] : per_agent) {
      st.z_own = shift_flat_trajectory(st.z_own, horizon_);
      st.lambda_own = shift_flat_trajectory(st.lambda_own, horizon_);
      if (st.lambda_peer.size() > 0) {
        st.lambda_peer = shift_flat_trajectory(st.lambda_peer, horizon_);
      }
      if (st.z_peer.size() > 0) st.z_peer = shift_flat_trajectory(st.z_peer, horizon_);
      if (st.s.size() > 1) {
        Eigen::VectorXd shifted(st.s.size());
        shifted.head(st.s.size() - 1) = st.s.tail(st.s.size() - 1);
        shifted[st.s.size() - 1] = st.s[st.s.size() - 1];
        st.s = shifted;
      }
    }
  }
}

void ConsensusEngine::reset_duals() {
  for (auto& per_agent : edge_state_) {
    for (auto& [nbr, st] : per_agent) {
      st.lambda_own.setZero();
      if (st.lambda_peer.size() > 0) st.lambda_peer.setZero();
    }
  }
}

CycleResult ConsensusEngine::run_cycle(const std::vector<QpProblem>& node_qps,
                                       const std::vector<EdgeProblemInput>& edge_inputs,
                                       long cycle) {
  if (!initialized_) throw std::logic_error("engine not initialized");
  const int num_agents = graph_.num_nodes;
  const int num_edges = graph_.num_edges();
  const int block = horizon_ * kStageDim;
  if (static_cast<int>(node_qps.size()) != num_agents) {
    throw std::invalid_argument("one node QP per agent required");
  }
  if (static_cast<int>(edge_inputs.size()) != num_edges) {
    throw std::invalid_argument("one edge input per graph edge required");
  }
  if (config_.reset_duals_each_cycle) reset_duals();

  CycleResult result;
  result.degraded.assign(num_agents, false);
  // plain byte flags: parallel tasks may not write into a vector<bool>
  std::vector<char> degraded(num_agents, 0);

  // no coupling: one local solve per agent is the whole cycle
  if (num_edges == 0) {
    result.trajectories.resize(num_agents);
    result.timings.node_qp_seconds.resize(num_agents);
    for (int i = 0; i < num_agents; ++i) {
      QpSolver solver(node_qps[i], qp_settings_);
      solver.warm_start(xi_[i]);
      const auto start = std::chrono::steady_clock::now();
      const QpSolution sol = solver.solve();
      result.timings.node_qp_seconds[i] = seconds_since(start);
      if (sol.status == QpStatus::PrimalInfeasible) {
        result.degraded[i] = true;
      } else {
        xi_[i] = sol.x;
      }
      result.trajectories[i] = xi_[i];
      ++result.node_qp_count;
    }
    result.iterations = 1;
    return result;
  }

  // per-cycle solvers; structure is fixed within the cycle, only linear
  // costs move between ADMM iterations
  std::vector<std::unique_ptr<QpSolver>> node_solvers(num_agents);
  std::vector<Eigen::VectorXd> local_f(num_agents);
  for (int i = 0; i < num_agents; ++i) {
    local_f[i] = node_qps[i].f;
    std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> terms;
    for (int j : graph_.neighbors(i)) {
      const PerEdge& st = edge_state_[i].at(j);
      terms.emplace_back(st.z_own, st.lambda_own);
    }
    node_solvers[i] = std::make_unique<QpSolver>(build_node_qp(node_qps[i], terms, config_.rho),
                                                 qp_settings_);
    node_solvers[i]->warm_start(xi_[i]);
  }
  std::vector<std::unique_ptr<QpSolver>> edge_solvers(num_edges);

  std::vector<double> node_secs(num_agents);
  std::vector<double> edge_secs(num_edges);
  std::vector<std::pair<double, double>> edge_residuals(num_edges);

  for (int p = 0; p < config_.max_admm_iter; ++p) {
    // Step 1: node updates, in parallel
    pool_->parallel_for(num_agents, [&](int i) {
      Eigen::VectorXd f = local_f[i];
      for (int j : graph_.neighbors(i)) {
        const PerEdge& st = edge_state_[i].at(j);
        f -= config_.rho * (st.z_own - st.lambda_own);
      }
      node_solvers[i]->update_linear_cost(f);
      const auto start = std::chrono::steady_clock::now();
      const QpSolution sol = node_solvers[i]->solve();
      node_secs[i] = seconds_since(start);
      if (sol.status == QpStatus::PrimalInfeasible) {
        degraded[i] = 1;
      } else {
        xi_[i] = sol.x;
      }
      for (int j : graph_.neighbors(i)) {
        Message msg;
        msg.kind = Message::Kind::TrajectoryShare;
        msg.from = i;
        msg.to = j;
        msg.iteration = p;
        msg.cycle = cycle;
        msg.payload = xi_[i];
        transport_->send(std::move(msg));
      }
    });
    result.node_qp_count += num_agents;
    result.timings.node_qp_seconds.insert(result.timings.node_qp_seconds.end(),
                                          node_secs.begin(), node_secs.end());

    // exchange: store received neighbor trajectories
    pool_->parallel_for(num_agents, [&](int i) {
      for (auto& msg : transport_->receive(i, Message::Kind::TrajectoryShare, p)) {
        edge_state_[i].at(msg.from).peer_xi = std::move(msg.payload);
      }
    });

    // Step 2: edge updates at the owning (lower-indexed) endpoint, in parallel
    pool_->parallel_for(num_edges, [&](int e) {
      const auto [i, j] = graph_.edges[e];
      PerEdge& st = edge_state_[i].at(j);
      const Eigen::VectorXd target_i = xi_[i] + st.lambda_own;
      const Eigen::VectorXd target_j = st.peer_xi + st.lambda_peer;
      if (!edge_solvers[e]) {
        edge_solvers[e] = std::make_unique<QpSolver>(
            build_edge_qp(edge_inputs[e].psi_rows, horizon_, target_i, target_j,
                          edge_inputs[e].phi_weight, config_.rho),
            qp_settings_);
        const int slack_dim = static_cast<int>(edge_inputs[e].psi_rows.size());
        Eigen::VectorXd guess(2 * block + slack_dim);
        if (st.z_peer.size() == block && st.s.size() == slack_dim) {
          guess << st.z_own, st.z_peer, st.s;  // carried from the previous cycle
        } else {
          guess.head(block) = target_i;
          guess.segment(block, block) = target_j;
          for (int r = 0; r < slack_dim; ++r) {
            double v = -edge_inputs[e].psi_rows[r].rhs;
            for (const auto& [idx, c] : edge_inputs[e].psi_rows[r].coeffs) {
              v += c * guess[idx];
            }
            guess[2 * block + r] = std::max(0.0, v);
          }
        }
        edge_solvers[e]->warm_start(guess);
      } else {
        Eigen::VectorXd f = Eigen::VectorXd::Zero(edge_solvers[e]->problem().num_vars());
        f.head(block) = -config_.rho * target_i;
        f.segment(block, block) = -config_.rho * target_j;
        edge_solvers[e]->update_linear_cost(f);
      }
      const auto start = std::chrono::steady_clock::now();
      const QpSolution sol = edge_solvers[e]->solve();
      edge_secs[e] = seconds_since(start);
      if (sol.status == QpStatus::PrimalInfeasible) {
        throw std::runtime_error("edge QP infeasible despite slack");
      }
      const Eigen::VectorXd z_i_prev = st.z_own;
      const Eigen::VectorXd z_j_prev =
          st.z_peer.size() == block ? st.z_peer : Eigen::VectorXd(st.peer_xi);
      st.z_own = sol.x.head(block);
      st.z_peer = sol.x.segment(block, block);
      st.s = sol.x.tail(static_cast<int>(edge_inputs[e].psi_rows.size()));

      const double prim = std::max((xi_[i] - st.z_own).norm(), (st.peer_xi - st.z_peer).norm());
      const double dual = config_.rho * std::max((st.z_own - z_i_prev).norm(),
                                                 (st.z_peer - z_j_prev).norm());
      edge_residuals[e] = {prim, dual};

      Message msg;
      msg.kind = Message::Kind::EdgeResult;
      msg.from = i;
      msg.to = j;
      msg.iteration = p;
      msg.cycle = cycle;
      msg.edge_i = i;
      msg.edge_j = j;
      msg.payload.resize(2 * block);
      msg.payload << st.z_own, st.z_peer;
      transport_->send(std::move(msg));
    });
    result.edge_qp_count += num_edges;
    result.timings.edge_qp_seconds.insert(result.timings.edge_qp_seconds.end(),
                                          edge_secs.begin(), edge_secs.end());

    // Step 3: dual updates at both endpoints
    pool_->parallel_for(num_agents, [&](int i) {
      for (auto& msg : transport_->receive(i, Message::Kind::EdgeResult, p)) {
        PerEdge& st = edge_state_[i].at(msg.from);
        st.z_own = msg.payload.segment(block, block);  // receiver is the higher endpoint
      }
      for (int j : graph_.neighbors(i)) {
        PerEdge& st = edge_state_[i].at(j);
        st.lambda_own = dual_update(st.lambda_own, xi_[i], st.z_own);
        if (is_owner(i, j)) {
          st.lambda_peer = dual_update(st.lambda_peer, st.peer_xi, st.z_peer);
        }
      }
    });

    AdmmResiduals res;
    for (const auto& [prim, dual] : edge_residuals) {
      res.primal = std::max(res.primal, prim);
      res.dual = std::max(res.dual, dual);
    }
    result.residuals.push_back(res);
    result.iterations = p + 1;
    if (config_.residual_stop.has_value() &&
        res.primal <= config_.residual_stop->first &&
        res.dual <= config_.residual_stop->second) {
      break;
    }
  }

  result.trajectories = xi_;
  for (int i = 0; i < num_agents; ++i) result.degraded[i] = degraded[i] != 0;
  for (const auto& [i, j] : graph_.edges) {
    const PerEdge& st = edge_state_[i].at(j);
    EdgeState out;
    out.z_i = st.z_own;
    out.z_j = st.z_peer;
    out.s = st.s;
    out.lambda_i = st.lambda_own;
    out.lambda_j = st.lambda_peer;
    result.edge_states.emplace(std::make_pair(i, j), std::move(out));
  }
  return result;
}

}  // namespace swarm_dmpc
