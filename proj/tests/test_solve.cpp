// SPDX-License-Identifier: Apache-2.0
#include "ocular/error.hpp"
#include "ocular/solve.hpp"
#include "support.hpp"

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include <random>

using namespace ocular;
using namespace ocular::solve;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

LeastSquaresProblem linear_problem(const MatrixXd& a, const VectorXd& b, bool analytic) {
  LeastSquaresProblem p;
  p.num_params = a.cols();
  p.num_residuals = a.rows();
  p.residual = [a, b](const VectorXd& x) -> VectorXd { return a * x - b; };
  if (analytic) p.jacobian = [a](const VectorXd&) { return a; };
  return p;
}

}  // namespace

TEST(Lm, LinearProblemReachesNormalEquationSolution) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1);
  MatrixXd a(5, 3);
  VectorXd b(5);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 3; ++j) a(i, j) = n(rng) + (i == j ? 3.0 : 0.0);
    b[i] = n(rng);
  }
  const VectorXd oracle = (a.transpose() * a).ldlt().solve(a.transpose() * b);
  for (bool analytic : {true, false}) {
    const SolveResult r = lm_minimize(linear_problem(a, b, analytic), VectorXd::Zero(3));
    EXPECT_LT((r.x - oracle).norm(), 1e-8);
    // Three accepted steps already land on the solution.
    SolveOptions three;
    three.max_iter = 3;
    const SolveResult r3 = lm_minimize(linear_problem(a, b, analytic), VectorXd::Zero(3), three);
    EXPECT_LE(r3.report.iterations, 3);
    EXPECT_LT((r3.x - oracle).norm(), 1e-8);
    EXPECT_TRUE(r.report.strictly_decreasing());
    EXPECT_LE(r.report.final_cost, r.report.initial_cost);
  }
}

TEST(Lm, AlreadyOptimal) {
  const VectorXd c = VectorXd::LinSpaced(4, 1.0, 4.0);
  LeastSquaresProblem p;
  p.num_params = 4;
  p.num_residuals = 4;
  p.residual = [c](const VectorXd& x) -> VectorXd { return x - c; };
  const SolveResult r = lm_minimize(p, c);
  EXPECT_EQ(r.report.iterations, 0);
  EXPECT_EQ(r.x, c);
  EXPECT_EQ(r.report.termination, Termination::gradient_tol);
}

TEST(Lm, Rosenbrock) {
  LeastSquaresProblem p;
  p.num_params = 2;
  p.num_residuals = 2;
  p.residual = [](const VectorXd& x) {
    VectorXd r(2);
    r << 10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0];
    return r;
  };
  p.jacobian = [](const VectorXd& x) {
    MatrixXd j(2, 2);
    j << -20.0 * x[0], 10.0, -1.0, 0.0;
    return j;
  };
  VectorXd x0(2);
  x0 << -1.2, 1.0;
  const SolveResult r = lm_minimize(p, x0);
  EXPECT_NEAR(r.x[0], 1.0, 1e-6);
  EXPECT_NEAR(r.x[1], 1.0, 1e-6);
  EXPECT_TRUE(r.report.strictly_decreasing());
  EXPECT_EQ(r.report.accepted_costs.size(), static_cast<std::size_t>(r.report.iterations) + 1);
}

TEST(Lm, RotationBlockIsUpdatedOnTheManifold) {
  // Find R with R a_i = b_i; residual in terms of the stored axis-angle.
  std::mt19937_64 rng(2);
  const geom::Mat3 truth = geom::exp_so3(Eigen::Vector3d(0.4, -1.1, 0.7));
  std::vector<geom::Vec3> a;
  for (int i = 0; i < 6; ++i) a.push_back(ocular::testing::random_unit(rng));
  LeastSquaresProblem p;
  p.num_params = 3;
  p.num_residuals = 18;
  p.layout.rotation_blocks = {0};
  p.residual = [&](const VectorXd& x) {
    VectorXd r(18);
    const geom::Mat3 rot = geom::exp_so3(x.head<3>());
    for (int i = 0; i < 6; ++i) r.segment<3>(3 * i) = rot * a[i] - truth * a[i];
    return r;
  };
  const SolveResult r = lm_minimize(p, VectorXd::Zero(3));
  EXPECT_LT(geom::rotation_angle(geom::exp_so3(r.x.head<3>()).transpose() * truth), 1e-9);
  EXPECT_TRUE(r.report.strictly_decreasing());
}

TEST(Lm, NonFiniteResidualThrows) {
  LeastSquaresProblem p;
  p.num_params = 1;
  p.num_residuals = 1;
  p.residual = [](const VectorXd&) { return VectorXd::Constant(1, std::nan("")); };
  EXPECT_THROW(lm_minimize(p, VectorXd::Zero(1)), SolveError);
}

TEST(NumericJacobian, ScalarPolynomial) {
  LeastSquaresProblem p;
  p.num_params = 1;
  p.num_residuals = 1;
  p.residual = [](const VectorXd& x) { return VectorXd::Constant(1, x[0] * x[0]); };
  const MatrixXd j = numeric_jacobian(p, VectorXd::Constant(1, 3.0));
  EXPECT_NEAR(j(0, 0), 6.0, 1e-6);
}

TEST(NumericJacobian, LinearIsExact) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  MatrixXd a(6, 4);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 4; ++j) a(i, j) = n(rng);
  const MatrixXd j = numeric_jacobian(linear_problem(a, VectorXd::Zero(6), false), VectorXd::Ones(4));
  EXPECT_LT((j - a).cwiseAbs().maxCoeff(), 1e-7);
  EXPECT_LT(max_relative_deviation(j, a), 1e-7);
}

TEST(RotationAlignment, IdentityAndKnownRotation) {
  std::mt19937_64 rng(4);
  std::vector<geom::Vec3> a, b;
  for (int i = 0; i < 5; ++i) a.push_back(ocular::testing::random_unit(rng));
  const geom::Mat3 id = solve_rotation_alignment(a, a);
  EXPECT_LT(geom::rotation_angle(id), 1e-10);

  for (int trial = 0; trial < 50; ++trial) {
    const geom::Mat3 r0 = ocular::testing::random_transform(rng, "a", "b").rotation_matrix();
    b.clear();
    for (const auto& v : a) b.push_back(r0 * v);
    const geom::Mat3 r = solve_rotation_alignment(a, b);
    EXPECT_LT(geom::rotation_angle(r0.transpose() * r), 1e-10);
    EXPECT_LT((r.transpose() * r - geom::Mat3::Identity()).norm(), 1e-10);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-10);
  }
}

TEST(RotationAlignment, ParallelInputIsDegenerate) {
  const geom::Vec3 v(0, 0, 1);
  const std::vector<geom::Vec3> a = {v, v};
  const std::vector<geom::Vec3> b = {v, v};
  EXPECT_THROW(solve_rotation_alignment(a, b), DegenerateError);
  const std::vector<geom::Vec3> one = {v};
  EXPECT_THROW(solve_rotation_alignment(one, one), DegenerateError);
}

TEST(RotationAlignment, WeightsSelectTheInformativePairs) {
  // A corrupted pair with zero weight must not change the answer.
  std::mt19937_64 rng(5);
  const geom::Mat3 r0 = geom::exp_so3(geom::Vec3(0.2, 0.3, -0.5));
  std::vector<geom::Vec3> a, b;
  for (int i = 0; i < 4; ++i) {
    a.push_back(ocular::testing::random_unit(rng));
    b.push_back(r0 * a.back());
  }
  a.push_back(geom::Vec3(1, 0, 0));
  b.push_back(geom::Vec3(0, 1, 0));
  const std::vector<double> w = {1, 1, 1, 1, 0};
  EXPECT_LT(geom::rotation_angle(r0.transpose() * solve_rotation_alignment(a, b, w)), 1e-10);
}
