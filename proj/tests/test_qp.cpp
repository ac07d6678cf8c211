#include <doctest.h>

#include <fstream>
#include <json.hpp>
#include <random>

#include "support/active_set_oracle.hpp"
#include "swarm_dmpc/qp.hpp"

using namespace swarm_dmpc;

namespace {

QpSettings tight_settings() {
  QpSettings s;
  s.eps_abs = 1e-9;
  s.eps_rel = 1e-9;
  s.max_iter = 20000;
  s.polish = true;
  return s;
}

}  // namespace

TEST_SUITE("qp") {

  TEST_CASE("unconstrained minimum of a shifted quadratic") {
    QpProblem p;
    p.H = 2.0 * Eigen::MatrixXd::Identity(2, 2);
    p.f = Eigen::Vector2d(-2.0, -4.0);
    const QpSolution sol = solve(p, tight_settings());
    CHECK(sol.status == QpStatus::Solved);
    CHECK(sol.x[0] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(sol.x[1] == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(sol.objective == doctest::Approx(-5.0).epsilon(1e-9));
  }

  TEST_CASE("active lower bound") {
    QpProblem p;
    p.H = Eigen::MatrixXd::Constant(1, 1, 2.0);
    p.f = Eigen::VectorXd::Zero(1);
    p.lb = Eigen::VectorXd::Constant(1, 1.0);
    p.ub = Eigen::VectorXd::Constant(1, std::numeric_limits<double>::infinity());
    const QpSolution sol = solve(p, tight_settings());
    CHECK(sol.status == QpStatus::Solved);
    CHECK(sol.x[0] == doctest::Approx(1.0).epsilon(1e-8));
  }

  TEST_CASE("six-variable QP matches the active-set oracle") {
    std::mt19937 rng(7);
    const QpProblem p = oracle::random_qp(rng, 6, 2, 3);
    const auto ref = oracle::active_set_oracle(p);
    REQUIRE(ref.feasible);
    const QpSolution sol = solve(p, tight_settings());
    CHECK(sol.status == QpStatus::Solved);
    CHECK((sol.x - ref.x).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(std::abs(sol.objective - ref.objective) < 1e-7);
  }

  TEST_CASE("oracle equivalence over random problem shapes") {
    std::mt19937 rng(12345);
    std::uniform_int_distribution<int> nd(2, 12), med(0, 3), mid(0, 5);
    for (int trial = 0; trial < 60; ++trial) {
      const int n = nd(rng);
      const int me = std::min(med(rng), n - 1);
      const int mi = mid(rng);
      std::uniform_int_distribution<int> nbd(0, (8 - mi) / 2);
      const QpProblem p = oracle::random_qp(rng, n, me, mi, nbd(rng));
      const auto ref = oracle::active_set_oracle(p);
      REQUIRE(ref.feasible);
      const QpSolution sol = solve(p, tight_settings());
      CAPTURE(trial);
      REQUIRE(sol.status == QpStatus::Solved);
      CHECK((sol.x - ref.x).cwiseAbs().maxCoeff() < 1e-5);
      CHECK(std::abs(sol.objective - ref.objective) < 1e-7);
    }
  }

  TEST_CASE("kkt_check at the exact unconstrained optimum") {
    QpProblem p;
    p.H = 2.0 * Eigen::MatrixXd::Identity(2, 2);
    p.f = Eigen::Vector2d(-2.0, -4.0);
    const KktReport at_opt = kkt_check(p, Eigen::Vector2d(1.0, 2.0));
    CHECK(at_opt.primal_residual <= 1e-12);
    CHECK(at_opt.dual_residual <= 1e-12);
    CHECK(at_opt.complementarity <= 1e-12);

    const KktReport perturbed = kkt_check(p, Eigen::Vector2d(1.0 + 1e-3, 2.0));
    CHECK(perturbed.dual_residual > 1e-6);
  }

  TEST_CASE("kkt_check at a feasible non-optimal point") {
    QpProblem p;
    p.H = Eigen::MatrixXd::Constant(1, 1, 2.0);
    p.f = Eigen::VectorXd::Zero(1);
    p.lb = Eigen::VectorXd::Constant(1, 1.0);
    p.ub = Eigen::VectorXd::Constant(1, std::numeric_limits<double>::infinity());
    const KktReport report = kkt_check(p, Eigen::VectorXd::Constant(1, 2.0));
    CHECK(report.primal_residual <= 1e-12);
    CHECK(report.dual_residual > 0.0);
  }

  TEST_CASE("contradictory inequalities are reported infeasible") {
    QpProblem p;
    p.H = Eigen::MatrixXd::Identity(1, 1);
    p.f = Eigen::VectorXd::Zero(1);
    p.Ain.resize(2, 1);
    p.Ain << 1.0, -1.0;  // x >= 1 and -x >= 0
    p.bin.resize(2);
    p.bin << 1.0, 0.0;
    QpSettings s;
    s.max_iter = 4000;
    const QpSolution sol = solve(p, s);
    CHECK(sol.status == QpStatus::PrimalInfeasible);
  }

  TEST_CASE("cost matrix validation") {
    QpProblem p;
    p.H.resize(2, 2);
    p.f = Eigen::VectorXd::Zero(2);

    SUBCASE("indefinite cost is rejected") {
      p.H << 1.0, 0.0, 0.0, -1.0;
      CHECK_THROWS_AS(solve(p, {}), std::invalid_argument);
    }
    SUBCASE("asymmetric cost is rejected") {
      p.H << 1.0, 0.5, 0.0, 1.0;
      CHECK_THROWS_AS(solve(p, {}), std::invalid_argument);
    }
    SUBCASE("roundoff asymmetry is repaired") {
      p.H << 1.0, 1e-13, 0.0, 1.0;
      CHECK(solve(p, {}).status == QpStatus::Solved);
    }
  }

  TEST_CASE("warm start agrees with cold start") {
    std::mt19937 rng(99);
    const QpProblem p = oracle::random_qp(rng, 8, 2, 4, 2);
    QpSettings s = tight_settings();
    const QpSolution cold = solve(p, s);
    s.warm_start = Eigen::VectorXd::Constant(8, 0.3);
    const QpSolution warm = solve(p, s);
    REQUIRE(cold.status == QpStatus::Solved);
    REQUIRE(warm.status == QpStatus::Solved);
    CHECK((cold.x - warm.x).cwiseAbs().maxCoeff() < 1e-5);
    CHECK(cold.primal_residual <= s.eps_abs + 1e-12);
    CHECK(warm.primal_residual <= s.eps_abs + 1e-12);
  }

  TEST_CASE("repeated solves are bit-identical") {
    std::mt19937 rng(4);
    const QpProblem p = oracle::random_qp(rng, 10, 3, 5, 1);
    const QpSolution a = solve(p, tight_settings());
    const QpSolution b = solve(p, tight_settings());
    REQUIRE(a.x.size() == b.x.size());
    for (int i = 0; i < a.x.size(); ++i) CHECK(a.x[i] == b.x[i]);
    CHECK(a.iterations == b.iterations);
  }

  TEST_CASE("iteration cap returns the best iterate with residuals") {
    std::mt19937 rng(11);
    const QpProblem p = oracle::random_qp(rng, 10, 2, 6, 1);
    QpSettings s;
    s.eps_abs = 1e-14;  // unreachable: forces the cap
    s.eps_rel = 1e-14;
    s.max_iter = 10;
    const QpSolution sol = solve(p, s);
    CHECK(sol.status == QpStatus::MaxIter);
    CHECK(sol.iterations == 10);
    CHECK(sol.primal_residual >= 0.0);
    CHECK(sol.dual_residual >= 0.0);
    CHECK(sol.x.allFinite());
  }

  TEST_CASE("solved status implies residuals within declared tolerances") {
    std::mt19937 rng(21);
    for (int trial = 0; trial < 10; ++trial) {
      const QpProblem p = oracle::random_qp(rng, 9, 2, 4, 2);
      QpSettings s;
      s.eps_abs = 1e-6;
      s.eps_rel = 1e-6;
      s.max_iter = 20000;
      const QpSolution sol = solve(p, s);
      CAPTURE(trial);
      REQUIRE(sol.status == QpStatus::Solved);
      const KktReport report = kkt_check(p, sol.x);
      CHECK(report.primal_residual <= 1e-5);
      CHECK(sol.primal_residual <= 1e-5);
      CHECK(sol.dual_residual <= 1e-4);
    }
  }

  TEST_CASE("diagonal-cost problems take the low-rank path and stay correct") {
    std::mt19937 rng(31);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int n = 80;
    QpProblem p;
    p.H = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) p.H(i, i) = 1.0 + std::abs(normal(rng));
    p.f.resize(n);
    for (int i = 0; i < n; ++i) p.f[i] = normal(rng);
    p.Ain.resize(6, n);
    p.bin.resize(6);
    for (int r = 0; r < 6; ++r) {
      for (int c = 0; c < n; ++c) p.Ain(r, c) = normal(rng);
      p.bin[r] = p.Ain.row(r).sum() * 0.01 - 0.5;
    }
    const QpSolution sol = solve(p, tight_settings());
    REQUIRE(sol.status == QpStatus::Solved);
    const KktReport report = kkt_check(p, sol.x);
    CHECK(report.primal_residual <= 1e-7);
    CHECK(report.dual_residual <= 1e-6);
  }

  TEST_CASE("json dump is self-describing") {
    QpProblem p;
    p.H = 2.0 * Eigen::MatrixXd::Identity(2, 2);
    p.f = Eigen::Vector2d(1.0, -1.0);
    p.Aeq.resize(1, 2);
    p.Aeq << 1.0, 1.0;
    p.beq = Eigen::VectorXd::Constant(1, 3.0);
    const std::string path = "qp_dump_test.json";
    dump_qp_json(p, path, "test problem");

    std::ifstream in(path);
    nlohmann::json j;
    in >> j;
    CHECK(j["num_vars"] == 2);
    CHECK(j["num_eq"] == 1);
    CHECK(j["num_ineq"] == 0);
    CHECK(j["H"]["rows"] == 2);
    CHECK(j["H"]["data"].size() == 4);
    CHECK(j["name"] == "test problem");
  }
}
