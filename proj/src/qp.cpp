#include "swarm_dmpc/qp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <vector>

#include <json.hpp>

namespace swarm_dmpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double max_abs(const Eigen::MatrixXd& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

double inf_norm(const Eigen::VectorXd& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

void check_finite(const Eigen::MatrixXd& m, const char* what) {
  if (m.size() != 0 && !m.allFinite()) {
    throw std::invalid_argument(std::string("non-finite entries in ") + what);
  }
}

}  // namespace

double QpProblem::objective(const Eigen::VectorXd& x) const {
  return 0.5 * x.dot(H * x) + f.dot(x);
}

const char* to_string(QpStatus status) {
  switch (status) {
    case QpStatus::Solved: return "solved";
    case QpStatus::MaxIter: return "max_iter";
    case QpStatus::PrimalInfeasible: return "primal_infeasible";
  }
  return "unknown";
}

QpSolver::QpSolver(QpProblem problem, QpSettings settings)
    : problem_(std::move(problem)), settings_(settings), rho_base_(settings.rho) {
  const int n = problem_.num_vars();
  if (problem_.H.rows() != problem_.H.cols()) throw std::invalid_argument("H not square");
  if (problem_.f.size() != n) throw std::invalid_argument("f dimension mismatch");
  if (problem_.Aeq.rows() > 0 && problem_.Aeq.cols() != n) {
    throw std::invalid_argument("Aeq column dimension mismatch");
  }
  if (problem_.Aeq.rows() != problem_.beq.size()) {
    throw std::invalid_argument("Aeq/beq row mismatch");
  }
  if (problem_.Ain.rows() > 0 && problem_.Ain.cols() != n) {
    throw std::invalid_argument("Ain column dimension mismatch");
  }
  if (problem_.Ain.rows() != problem_.bin.size()) {
    throw std::invalid_argument("Ain/bin row mismatch");
  }
  if (problem_.lb.size() != 0 && problem_.lb.size() != n) {
    throw std::invalid_argument("lb dimension mismatch");
  }
  if (problem_.ub.size() != 0 && problem_.ub.size() != n) {
    throw std::invalid_argument("ub dimension mismatch");
  }
  check_finite(problem_.H, "H");
  check_finite(problem_.f, "f");
  check_finite(problem_.Aeq, "Aeq");
  check_finite(problem_.beq, "beq");
  check_finite(problem_.Ain, "Ain");
  check_finite(problem_.bin, "bin");

  const double h_scale = std::max(1.0, max_abs(problem_.H));
  if (max_abs(problem_.H - problem_.H.transpose()) > 1e-10 * h_scale) {
    throw std::invalid_argument("H not symmetric within tolerance");
  }
  P_ = 0.5 * (problem_.H + problem_.H.transpose());
  q_ = problem_.f;

  if (settings_.validate_cost && n > 0) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(P_);
    if (ldlt.info() != Eigen::Success ||
        (ldlt.vectorD().size() > 0 && ldlt.vectorD().minCoeff() < -1e-8 * h_scale)) {
      throw std::invalid_argument("cost matrix is not positive semidefinite");
    }
  }

  build_internal();
}

void QpSolver::build_internal() {
  const int n = problem_.num_vars();
  const int me = static_cast<int>(problem_.Aeq.rows());
  const int mi = static_cast<int>(problem_.Ain.rows());

  std::vector<int> bounded_vars;
  const bool has_lb = problem_.lb.size() == n;
  const bool has_ub = problem_.ub.size() == n;
  for (int i = 0; i < n; ++i) {
    const double lo = has_lb ? problem_.lb[i] : -kInf;
    const double hi = has_ub ? problem_.ub[i] : kInf;
    if (std::isnan(lo) || std::isnan(hi)) throw std::invalid_argument("NaN bound");
    if (lo > hi) throw std::invalid_argument("lb exceeds ub");
    if (lo > -kInf || hi < kInf) bounded_vars.push_back(i);
  }

  m_ = me + mi + static_cast<int>(bounded_vars.size());
  l_.resize(m_);
  u_.resize(m_);
  std::vector<Eigen::Triplet<double>> trip;
  for (int r = 0; r < me; ++r) {
    for (int c = 0; c < n; ++c) {
      if (problem_.Aeq(r, c) != 0.0) trip.emplace_back(r, c, problem_.Aeq(r, c));
    }
    l_[r] = problem_.beq[r];
    u_[r] = problem_.beq[r];
  }
  for (int r = 0; r < mi; ++r) {
    for (int c = 0; c < n; ++c) {
      if (problem_.Ain(r, c) != 0.0) trip.emplace_back(me + r, c, problem_.Ain(r, c));
    }
    l_[me + r] = problem_.bin[r];
    u_[me + r] = kInf;
  }
  for (size_t b = 0; b < bounded_vars.size(); ++b) {
    const int i = bounded_vars[b];
    const int r = me + mi + static_cast<int>(b);
    trip.emplace_back(r, i, 1.0);
    l_[r] = has_lb ? problem_.lb[i] : -kInf;
    u_[r] = has_ub ? problem_.ub[i] : kInf;
  }
  A_.resize(m_, n);
  A_.setFromTriplets(trip.begin(), trip.end());
  A_.makeCompressed();

  rho_vec_.resize(m_);
  for (int r = 0; r < m_; ++r) {
    rho_vec_[r] = (l_[r] == u_[r]) ? rho_base_ * kEqRhoScale : rho_base_;
  }

  // Woodbury pays off when the cost is diagonal and constraints are few:
  // factor an m x m system instead of n x n.
  use_woodbury_ = false;
  if (n >= 64 && m_ > 0 && m_ * 2 <= n) {
    bool diagonal = true;
    for (int r = 0; r < n && diagonal; ++r) {
      for (int c = 0; c < n; ++c) {
        if (r != c && P_(r, c) != 0.0) {
          diagonal = false;
          break;
        }
      }
    }
    use_woodbury_ = diagonal;
  }
  factorized_ = false;
}

void QpSolver::factorize() {
  if (use_woodbury_) {
    d_inv_ = (P_.diagonal().array() + kSigma).inverse();
    Eigen::SparseMatrix<double> a_cm(A_);
    Eigen::SparseMatrix<double> scaled = a_cm * d_inv_.asDiagonal();
    Eigen::MatrixXd w = Eigen::MatrixXd(Eigen::SparseMatrix<double>(scaled * a_cm.transpose()));
    w.diagonal() += rho_vec_.cwiseInverse();
    w_llt_.compute(w);
    if (w_llt_.info() != Eigen::Success) {
      use_woodbury_ = false;  // fall through to the dense path
    } else {
      factorized_ = true;
      return;
    }
  }
  Eigen::MatrixXd kkt = P_;
  kkt.diagonal().array() += kSigma;
  for (int r = 0; r < m_; ++r) {
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it1(A_, r); it1; ++it1) {
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it2(A_, r); it2; ++it2) {
        kkt(it1.col(), it2.col()) += rho_vec_[r] * it1.value() * it2.value();
      }
    }
  }
  kkt_llt_.compute(kkt);
  if (kkt_llt_.info() != Eigen::Success) {
    throw std::runtime_error("KKT factorization failed");
  }
  factorized_ = true;
}

Eigen::VectorXd QpSolver::kkt_solve(const Eigen::VectorXd& rhs) const {
  if (use_woodbury_) {
    Eigen::VectorXd db = d_inv_.cwiseProduct(rhs);
    Eigen::VectorXd t = w_llt_.solve(A_ * db);
    return db - d_inv_.cwiseProduct(A_.transpose() * t);
  }
  return kkt_llt_.solve(rhs);
}

void QpSolver::update_linear_cost(const Eigen::VectorXd& f) {
  if (f.size() != problem_.num_vars()) throw std::invalid_argument("f dimension mismatch");
  check_finite(f, "f");
  problem_.f = f;
  q_ = f;
}

void QpSolver::warm_start(const Eigen::VectorXd& x0) {
  if (x0.size() != problem_.num_vars()) throw std::invalid_argument("warm start dimension");
  x_ = x0;
  z_ = A_ * x_;
  if (!have_state_ || y_.size() != m_) y_ = Eigen::VectorXd::Zero(m_);
  have_state_ = true;
}

void QpSolver::compute_residuals(double& rp, double& rd, double& scale_p,
                                 double& scale_d) const {
  const Eigen::VectorXd ax = A_ * x_;
  const Eigen::VectorXd px = P_ * x_;
  const Eigen::VectorXd aty = A_.transpose() * y_;
  rp = m_ > 0 ? inf_norm(ax - z_) : 0.0;
  rd = inf_norm(px + q_ + aty);
  scale_p = std::max(inf_norm(ax), inf_norm(z_));
  scale_d = std::max({inf_norm(px), inf_norm(aty), inf_norm(q_)});
}

QpSolution QpSolver::solve_unconstrained() {
  Eigen::MatrixXd reg = P_;
  reg.diagonal().array() += kSigma;
  Eigen::LLT<Eigen::MatrixXd> llt(reg);
  if (llt.info() != Eigen::Success) throw std::runtime_error("cost factorization failed");
  Eigen::VectorXd x = llt.solve(-q_);
  // one refinement step against the unregularized system
  x += llt.solve(-q_ - P_ * x);
  QpSolution sol;
  sol.x = x;
  sol.status = QpStatus::Solved;
  sol.primal_residual = 0.0;
  sol.dual_residual = inf_norm(P_ * x + q_);
  sol.objective = problem_.objective(x);
  sol.iterations = 0;
  x_ = x;
  z_.resize(0);
  y_.resize(0);
  have_state_ = true;
  return sol;
}

QpSolution QpSolver::solve() {
  const int n = problem_.num_vars();
  if (m_ == 0) return solve_unconstrained();
  if (!factorized_) factorize();

  if (settings_.warm_start.has_value() && !have_state_) {
    warm_start(*settings_.warm_start);
  }
  if (!have_state_) {
    x_ = Eigen::VectorXd::Zero(n);
    z_ = Eigen::VectorXd::Zero(m_);
    y_ = Eigen::VectorXd::Zero(m_);
    have_state_ = true;
  }
  if (z_.size() != m_) z_ = A_ * x_;
  if (y_.size() != m_) y_ = Eigen::VectorXd::Zero(m_);

  QpSolution sol;
  Eigen::VectorXd y_prev_check = y_;
  Eigen::VectorXd best_x = x_, best_y = y_, best_z = z_;
  double best_metric = kInf, best_rp = kInf, best_rd = kInf;
  int iter = 0;
  QpStatus status = QpStatus::MaxIter;

  while (iter < settings_.max_iter) {
    ++iter;
    Eigen::VectorXd rhs = kSigma * x_ - q_;
    rhs.noalias() += A_.transpose() * (rho_vec_.cwiseProduct(z_) - y_);
    const Eigen::VectorXd x_tilde = kkt_solve(rhs);
    const Eigen::VectorXd z_tilde = A_ * x_tilde;

    x_ = kRelax * x_tilde + (1.0 - kRelax) * x_;
    const Eigen::VectorXd z_relaxed = kRelax * z_tilde + (1.0 - kRelax) * z_;
    const Eigen::VectorXd z_arg = z_relaxed + y_.cwiseQuotient(rho_vec_);
    const Eigen::VectorXd z_new = z_arg.cwiseMax(l_).cwiseMin(u_);
    y_ += rho_vec_.cwiseProduct(z_relaxed - z_new);
    z_ = z_new;

    const bool checkpoint = (iter % kCheckInterval == 0) || iter == settings_.max_iter;
    if (!checkpoint) continue;

    double rp, rd, sp, sd;
    compute_residuals(rp, rd, sp, sd);
    const double metric = std::max(rp, rd);
    if (metric < best_metric) {
      best_metric = metric;
      best_x = x_;
      best_y = y_;
      best_z = z_;
      best_rp = rp;
      best_rd = rd;
    }
    const double eps_p = settings_.eps_abs + settings_.eps_rel * sp;
    const double eps_d = settings_.eps_abs + settings_.eps_rel * sd;
    if (rp <= eps_p && rd <= eps_d) {
      status = QpStatus::Solved;
      best_x = x_;
      best_y = y_;
      best_z = z_;
      best_rp = rp;
      best_rd = rd;
      break;
    }

    // primal infeasibility certificate from the dual-variable drift
    Eigen::VectorXd dy = y_ - y_prev_check;
    y_prev_check = y_;
    const double dy_norm = inf_norm(dy);
    if (dy_norm > 1e-12) {
      dy /= dy_norm;
      const double eps_inf = settings_.eps_infeasible;
      bool certificate = inf_norm(Eigen::VectorXd(A_.transpose() * dy)) <= eps_inf;
      double support = 0.0;
      for (int r = 0; r < m_ && certificate; ++r) {
        const double pos = std::max(dy[r], 0.0);
        const double neg = std::min(dy[r], 0.0);
        if (pos > eps_inf && u_[r] == kInf) certificate = false;
        else if (pos > 0.0 && u_[r] < kInf) support += u_[r] * pos;
        if (neg < -eps_inf && l_[r] == -kInf) certificate = false;
        else if (neg < 0.0 && l_[r] > -kInf) support += l_[r] * neg;
      }
      if (certificate && support < -eps_inf) {
        status = QpStatus::PrimalInfeasible;
        break;
      }
    }

    if (settings_.adaptive_rho && iter % kAdaptInterval == 0 && iter < settings_.max_iter) {
      const double rp_rel = rp / std::max(sp, 1e-12);
      const double rd_rel = rd / std::max(sd, 1e-12);
      const double ratio = std::sqrt(rp_rel / std::max(rd_rel, 1e-16));
      if (ratio > 5.0 || ratio < 0.2) {
        rho_base_ = std::clamp(rho_base_ * ratio, 1e-6, 1e6);
        for (int r = 0; r < m_; ++r) {
          rho_vec_[r] = (l_[r] == u_[r]) ? rho_base_ * kEqRhoScale : rho_base_;
        }
        factorize();
      }
    }
  }

  x_ = best_x;
  y_ = best_y;
  z_ = best_z;
  sol.x = x_;
  sol.status = status;
  sol.iterations = iter;
  sol.primal_residual = best_rp == kInf ? 0.0 : best_rp;
  sol.dual_residual = best_rd == kInf ? 0.0 : best_rd;
  if (status == QpStatus::PrimalInfeasible) {
    sol.objective = kInf;
    return sol;
  }
  if (settings_.polish && try_polish(sol)) {
    sol.polished = true;
    x_ = sol.x;
  }
  sol.objective = problem_.objective(sol.x);
  return sol;
}

bool QpSolver::try_polish(QpSolution& sol) const {
  const int n = problem_.num_vars();
  const double y_tol = 1e-10 * std::max(1.0, inf_norm(y_));
  std::vector<int> active;
  std::vector<int> side;  // -1 lower, +1 upper, 0 equality
  std::vector<double> bact;
  for (int r = 0; r < m_; ++r) {
    if (l_[r] == u_[r]) {
      active.push_back(r);
      side.push_back(0);
      bact.push_back(l_[r]);
    } else if (y_[r] < -y_tol && l_[r] > -kInf) {
      active.push_back(r);
      side.push_back(-1);
      bact.push_back(l_[r]);
    } else if (y_[r] > y_tol && u_[r] < kInf) {
      active.push_back(r);
      side.push_back(1);
      bact.push_back(u_[r]);
    }
  }
  const int ma = static_cast<int>(active.size());
  const int dim = n + ma;
  constexpr double kDelta = 1e-7;

  Eigen::MatrixXd adense = Eigen::MatrixXd(A_);
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(dim, dim);
  kkt.topLeftCorner(n, n) = P_;
  kkt.topLeftCorner(n, n).diagonal().array() += kDelta;
  for (int a = 0; a < ma; ++a) {
    kkt.block(n + a, 0, 1, n) = adense.row(active[a]);
    kkt.block(0, n + a, n, 1) = adense.row(active[a]).transpose();
    kkt(n + a, n + a) = -kDelta;
  }
  Eigen::VectorXd rhs(dim);
  rhs.head(n) = -q_;
  for (int a = 0; a < ma; ++a) rhs[n + a] = bact[a];

  Eigen::LDLT<Eigen::MatrixXd> ldlt(kkt);
  if (ldlt.info() != Eigen::Success) return false;
  Eigen::VectorXd s = ldlt.solve(rhs);
  // iterative refinement against the unregularized KKT system
  auto apply_k0 = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd out(dim);
    out.head(n) = P_ * v.head(n);
    for (int a = 0; a < ma; ++a) {
      out.head(n) += adense.row(active[a]).transpose() * v[n + a];
      out[n + a] = adense.row(active[a]).dot(v.head(n));
    }
    return out;
  };
  for (int pass = 0; pass < 3; ++pass) {
    s += ldlt.solve(rhs - apply_k0(s));
  }

  const Eigen::VectorXd xp = s.head(n);
  Eigen::VectorXd y_full = Eigen::VectorXd::Zero(m_);
  for (int a = 0; a < ma; ++a) y_full[active[a]] = s[n + a];

  // reject candidates whose recomputed multipliers flip sign: the guessed
  // active set was wrong even if the reduced KKT system is solved exactly
  const double sign_tol = 1e-7 * std::max(1.0, inf_norm(y_full));
  for (int a = 0; a < ma; ++a) {
    if (side[a] == -1 && s[n + a] > sign_tol) return false;
    if (side[a] == 1 && s[n + a] < -sign_tol) return false;
  }

  const Eigen::VectorXd ax = A_ * xp;
  double viol = 0.0;
  for (int r = 0; r < m_; ++r) {
    viol = std::max(viol, std::max(l_[r] - ax[r], ax[r] - u_[r]));
  }
  viol = std::max(viol, 0.0);
  const double rd = inf_norm(P_ * xp + q_ + adense.transpose() * y_full);
  if (std::max(viol, rd) <= std::max(sol.primal_residual, sol.dual_residual)) {
    sol.x = xp;
    sol.primal_residual = viol;
    sol.dual_residual = rd;
    sol.status = QpStatus::Solved;
    return true;
  }
  return false;
}

QpSolution solve(const QpProblem& problem, const QpSettings& settings) {
  QpSolver solver(problem, settings);
  return solver.solve();
}

KktReport kkt_check(const QpProblem& problem, const Eigen::VectorXd& x) {
  const int n = problem.num_vars();
  if (x.size() != n) throw std::invalid_argument("x dimension mismatch");
  const Eigen::MatrixXd hs = 0.5 * (problem.H + problem.H.transpose());
  const Eigen::VectorXd grad = hs * x + problem.f;

  KktReport report;
  const double act_tol = 1e-8 * (1.0 + inf_norm(x));

  // columns of the multiplier fit: [Aeq' | -Ain_act' | -e_lb | +e_ub]
  std::vector<Eigen::VectorXd> cols;
  std::vector<bool> sign_constrained;
  std::vector<double> slacks;  // per sign-constrained column, for complementarity

  for (int r = 0; r < problem.Aeq.rows(); ++r) {
    cols.push_back(problem.Aeq.row(r).transpose());
    sign_constrained.push_back(false);
    slacks.push_back(0.0);
    report.primal_residual = std::max(
        report.primal_residual, std::abs(problem.Aeq.row(r).dot(x) - problem.beq[r]));
  }
  for (int r = 0; r < problem.Ain.rows(); ++r) {
    const double slack = problem.Ain.row(r).dot(x) - problem.bin[r];
    report.primal_residual = std::max(report.primal_residual, -slack);
    if (std::abs(slack) <= act_tol) {
      cols.push_back(-problem.Ain.row(r).transpose());
      sign_constrained.push_back(true);
      slacks.push_back(slack);
    }
  }
  const bool has_lb = problem.lb.size() == n;
  const bool has_ub = problem.ub.size() == n;
  for (int i = 0; i < n; ++i) {
    if (has_lb && problem.lb[i] > -kInf) {
      const double slack = x[i] - problem.lb[i];
      report.primal_residual = std::max(report.primal_residual, -slack);
      if (std::abs(slack) <= act_tol) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
        e[i] = -1.0;
        cols.push_back(e);
        sign_constrained.push_back(true);
        slacks.push_back(slack);
      }
    }
    if (has_ub && problem.ub[i] < kInf) {
      const double slack = problem.ub[i] - x[i];
      report.primal_residual = std::max(report.primal_residual, -slack);
      if (std::abs(slack) <= act_tol) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
        e[i] = 1.0;
        cols.push_back(e);
        sign_constrained.push_back(true);
        slacks.push_back(slack);
      }
    }
  }
  report.primal_residual = std::max(report.primal_residual, 0.0);

  if (cols.empty()) {
    report.dual_residual = inf_norm(grad);
    return report;
  }

  const int k = static_cast<int>(cols.size());
  Eigen::MatrixXd m(n, k);
  for (int c = 0; c < k; ++c) m.col(c) = cols[c];

  // least-squares multiplier fit with nonnegativity enforced by clamping and
  // re-fitting over the surviving columns
  std::vector<bool> enabled(k, true);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(k);
  for (int pass = 0; pass < 3; ++pass) {
    std::vector<int> idx;
    for (int c = 0; c < k; ++c) {
      if (enabled[c]) idx.push_back(c);
    }
    if (idx.empty()) break;
    Eigen::MatrixXd msub(n, idx.size());
    for (size_t c = 0; c < idx.size(); ++c) msub.col(c) = m.col(idx[c]);
    Eigen::VectorXd wsub = msub.colPivHouseholderQr().solve(-grad);
    bool clamped = false;
    w.setZero();
    for (size_t c = 0; c < idx.size(); ++c) {
      if (sign_constrained[idx[c]] && wsub[c] < 0.0) {
        enabled[idx[c]] = false;
        clamped = true;
      } else {
        w[idx[c]] = wsub[c];
      }
    }
    if (!clamped) break;
  }

  report.dual_residual = inf_norm(grad + m * w);
  for (int c = 0; c < k; ++c) {
    if (sign_constrained[c]) {
      report.complementarity = std::max(report.complementarity, std::abs(w[c] * slacks[c]));
    }
  }
  return report;
}

namespace {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> data;
  data.reserve(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  j["data"] = data;
  return j;
}

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  std::vector<double> data(v.data(), v.data() + v.size());
  return nlohmann::json(data);
}

}  // namespace

void dump_qp_json(const QpProblem& problem, const std::string& path,
                  const std::string& name) {
  nlohmann::json j;
  j["name"] = name;
  j["num_vars"] = problem.num_vars();
  j["num_eq"] = problem.Aeq.rows();
  j["num_ineq"] = problem.Ain.rows();
  j["layout"] = "dense row-major";
  j["H"] = matrix_to_json(problem.H);
  j["f"] = vector_to_json(problem.f);
  j["Aeq"] = matrix_to_json(problem.Aeq);
  j["beq"] = vector_to_json(problem.beq);
  j["Ain"] = matrix_to_json(problem.Ain);
  j["bin"] = vector_to_json(problem.bin);
  j["lb"] = vector_to_json(problem.lb);
  j["ub"] = vector_to_json(problem.ub);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << j.dump() << "\n";
}

}  // namespace swarm_dmpc
