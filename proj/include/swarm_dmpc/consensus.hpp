#ifndef SWARM_DMPC_CONSENSUS_HPP
#define SWARM_DMPC_CONSENSUS_HPP

#include <map>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "swarm_dmpc/dynamics.hpp"
#include "swarm_dmpc/qp.hpp"
#include "swarm_dmpc/safety.hpp"
#include "swarm_dmpc/thread_pool.hpp"
#include "swarm_dmpc/transport.hpp"

namespace swarm_dmpc {

/// Undirected interaction graph over agent ids 0..n-1.
struct InteractionGraph {
  int num_nodes = 0;
  std::vector<std::pair<int, int>> edges;      // i < j, sorted, unique
  std::vector<std::vector<int>> neighbor_of;   // derived adjacency

  static InteractionGraph complete(int n);
  static InteractionGraph from_edges(int n, std::vector<std::pair<int, int>> edges);

  const std::vector<int>& neighbors(int i) const { return neighbor_of.at(i); }
  int num_edges() const { return static_cast<int>(edges.size()); }
};

/// Per-edge consensus variables: copies of both endpoint trajectories, the
/// slack, and the scaled duals.
struct EdgeState {
  Eigen::VectorXd z_i;
  Eigen::VectorXd z_j;
  Eigen::VectorXd s;
  Eigen::VectorXd lambda_i;
  Eigen::VectorXd lambda_j;
};

struct AdmmConfig {
  double rho = 20.0;
  int max_admm_iter = 15;
  /// Optional (eps_primal, eps_dual) early exit; off by default to match a
  /// fixed iteration budget per cycle.
  std::optional<std::pair<double, double>> residual_stop;
  bool reset_duals_each_cycle = false;
};

/// Standard scaled-ADMM residuals: max consensus mismatch over edges and
/// rho-scaled max change of the edge copies.
struct AdmmResiduals {
  double primal = 0.0;
  double dual = 0.0;
};

/// Inter-agent rows for one edge over the joint [xi_i; xi_j] layout.
struct EdgeProblemInput {
  std::vector<AffineConstraintRow> psi_rows;
  double phi_weight = 5.0;
};

struct CycleTimings {
  std::vector<double> node_qp_seconds;
  std::vector<double> edge_qp_seconds;
};

struct CycleResult {
  std::vector<Eigen::VectorXd> trajectories;
  std::vector<bool> degraded;
  std::map<std::pair<int, int>, EdgeState> edge_states;
  std::vector<AdmmResiduals> residuals;
  CycleTimings timings;
  int iterations = 0;
  int node_qp_count = 0;
  int edge_qp_count = 0;
};

/// Node update objective: the local QP plus (rho/2) sum_j ||xi - z_j + lambda_j||^2.
QpProblem build_node_qp(const QpProblem& local_qp,
                        const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& edge_terms,
                        double rho);

/// Edge update objective over [z_i; z_j; s]: phi ||s||^2 plus proximity to
/// the targets xi + lambda, subject to the relaxed inter-agent rows
/// psi <= s with s >= 0 (slack pays only for actual violation).
QpProblem build_edge_qp(const std::vector<AffineConstraintRow>& psi_rows, int horizon,
                        const Eigen::VectorXd& target_i, const Eigen::VectorXd& target_j,
                        double phi_weight, double rho);

/// One node update; edge_terms holds one (z, lambda) pair per neighbor.
Eigen::VectorXd node_update(const QpProblem& local_qp,
                            const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& edge_terms,
                            double rho, const QpSettings& settings);

/// One edge update; returns (z_i, z_j, s).
std::tuple<Eigen::VectorXd, Eigen::VectorXd, Eigen::VectorXd> edge_update(
    const std::vector<AffineConstraintRow>& psi_rows, int horizon,
    const Eigen::VectorXd& xi_new, const Eigen::VectorXd& xj_new,
    const Eigen::VectorXd& lambda_i, const Eigen::VectorXd& lambda_j,
    double phi_weight, double rho, const QpSettings& settings);

/// Scaled dual ascent: lambda + xi - z.
Eigen::VectorXd dual_update(const Eigen::VectorXd& lambda, const Eigen::VectorXd& xi,
                            const Eigen::VectorXd& z);

/// Receding-horizon shift of a flattened trajectory (repeat the last step).
Eigen::VectorXd shift_flat_trajectory(const Eigen::VectorXd& xi, int horizon);

/// The node-edge split ADMM engine. Owns the consensus variables (edge
/// copies and scaled duals) across control cycles; every cross-agent value
/// moves through the Transport. Node and edge phases run in parallel on the
/// pool and are barrier-separated; results are identical for any worker
/// count.
class ConsensusEngine {
 public:
  ConsensusEngine(InteractionGraph graph, AdmmConfig config, int horizon,
                  QpSettings qp_settings, Transport* transport = nullptr,
                  ThreadPool* pool = nullptr);

  /// Cold start at t = 0: edge copies take the initial trajectories, duals zero.
  void initialize(const std::vector<Eigen::VectorXd>& xi0);

  /// Warm-start shift of xi, z, lambda (and slack) between control cycles.
  void shift_state();

  void reset_duals();

  /// Runs the configured number of ADMM rounds:
  /// parallel node updates -> trajectory exchange -> parallel edge updates ->
  /// edge-result exchange -> dual updates.
  CycleResult run_cycle(const std::vector<QpProblem>& node_qps,
                        const std::vector<EdgeProblemInput>& edge_inputs, long cycle);

  const InteractionGraph& graph() const { return graph_; }
  const AdmmConfig& config() const { return config_; }

 private:
  struct PerEdge {
    Eigen::VectorXd z_own;       // this endpoint's edge copy
    Eigen::VectorXd lambda_own;  // this endpoint's scaled dual
    Eigen::VectorXd peer_xi;     // neighbor trajectory received this iteration
    // owner-side extras (lower endpoint computes the edge QP)
    Eigen::VectorXd lambda_peer;
    Eigen::VectorXd z_peer;
    Eigen::VectorXd s;
  };

  bool is_owner(int agent, int neighbor) const { return agent < neighbor; }

  InteractionGraph graph_;
  AdmmConfig config_;
  int horizon_ = 0;
  QpSettings qp_settings_;
  std::unique_ptr<DirectTransport> owned_transport_;
  Transport* transport_ = nullptr;
  std::unique_ptr<ThreadPool> owned_pool_;
  ThreadPool* pool_ = nullptr;

  std::vector<Eigen::VectorXd> xi_;
  std::vector<std::map<int, PerEdge>> edge_state_;  // [agent][neighbor]
  bool initialized_ = false;
};

}  // namespace swarm_dmpc

#endif  // SWARM_DMPC_CONSENSUS_HPP
