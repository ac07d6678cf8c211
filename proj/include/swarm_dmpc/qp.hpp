#ifndef SWARM_DMPC_QP_HPP
#define SWARM_DMPC_QP_HPP

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <optional>
#include <string>

namespace swarm_dmpc {

/// Dense convex QP:
///   min 0.5 x' H x + f' x
///   s.t. Aeq x = beq,  Ain x >= bin,  lb <= x <= ub
/// Empty matrices/vectors stand for absent blocks; +-inf entries in lb/ub
/// leave a variable one-sided or free.
struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd f;
  Eigen::MatrixXd Aeq;
  Eigen::VectorXd beq;
  Eigen::MatrixXd Ain;
  Eigen::VectorXd bin;
  Eigen::VectorXd lb;
  Eigen::VectorXd ub;

  int num_vars() const { return static_cast<int>(H.rows()); }
  double objective(const Eigen::VectorXd& x) const;
};

enum class QpStatus { Solved, MaxIter, PrimalInfeasible };

const char* to_string(QpStatus status);

struct QpSolution {
  Eigen::VectorXd x;
  QpStatus status = QpStatus::MaxIter;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double objective = 0.0;
  int iterations = 0;
  bool polished = false;
};

struct QpSettings {
  double eps_abs = 1e-6;
  double eps_rel = 1e-6;
  int max_iter = 200;
  std::optional<Eigen::VectorXd> warm_start;

  /// Active-set refinement of the converged iterate.
  bool polish = false;
  /// Periodic penalty rebalancing from the primal/dual residual ratio.
  bool adaptive_rho = true;
  /// Cost-matrix PSD check on ingestion (LDLT inertia).
  bool validate_cost = true;
  double rho = 0.1;
  double eps_infeasible = 1e-6;
};

/// Operator-splitting (ADMM) solver over the internal form
/// l <= Ax <= u. Keeps the KKT factorization and the last iterate across
/// solves, so repeated solves of the same structure with updated linear
/// costs are cheap and warm-started.
class QpSolver {
 public:
  QpSolver(QpProblem problem, QpSettings settings);

  void update_linear_cost(const Eigen::VectorXd& f);
  void warm_start(const Eigen::VectorXd& x0);
  QpSolution solve();

  const QpProblem& problem() const { return problem_; }

 private:
  void build_internal();
  void factorize();
  Eigen::VectorXd kkt_solve(const Eigen::VectorXd& rhs) const;
  QpSolution solve_unconstrained();
  bool try_polish(QpSolution& sol) const;
  void compute_residuals(double& rp, double& rd, double& scale_p, double& scale_d) const;

  QpProblem problem_;
  QpSettings settings_;

  // internal form
  Eigen::MatrixXd P_;
  Eigen::VectorXd q_;
  Eigen::SparseMatrix<double, Eigen::RowMajor> A_;
  Eigen::VectorXd l_, u_;
  Eigen::VectorXd rho_vec_;
  double rho_base_ = 0.1;
  int m_ = 0;

  // iterate state, preserved across solve() calls
  Eigen::VectorXd x_, y_, z_;
  bool have_state_ = false;

  // factorizations
  bool factorized_ = false;
  bool use_woodbury_ = false;
  Eigen::LLT<Eigen::MatrixXd> kkt_llt_;
  Eigen::VectorXd d_inv_;
  Eigen::LLT<Eigen::MatrixXd> w_llt_;

  static constexpr double kSigma = 1e-6;
  static constexpr double kRelax = 1.6;
  static constexpr double kEqRhoScale = 1e3;
  static constexpr int kCheckInterval = 5;
  static constexpr int kAdaptInterval = 25;
};

/// One-shot convenience wrapper around QpSolver.
QpSolution solve(const QpProblem& problem, const QpSettings& settings = {});

struct KktReport {
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double complementarity = 0.0;
};

/// Measures KKT residuals of a candidate point, fitting multipliers to the
/// constraints active at x. Independent of the solver's internal iterates.
KktReport kkt_check(const QpProblem& problem, const Eigen::VectorXd& x);

/// Self-describing JSON dump (matrices as dense row-major arrays).
void dump_qp_json(const QpProblem& problem, const std::string& path,
                  const std::string& name = "");

}  // namespace swarm_dmpc

#endif  // SWARM_DMPC_QP_HPP
