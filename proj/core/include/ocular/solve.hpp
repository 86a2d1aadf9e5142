// SPDX-License-Identifier: Apache-2.0
//
// Dense Levenberg-Marquardt, finite-difference Jacobians and closed-form
// rotation alignment.
#pragma once

#include "ocular/geom.hpp"

#include <Eigen/Core>

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ocular::solve {

/// Parameter slices that hold axis-angle rotations. The solver updates them
/// multiplicatively (R <- exp(delta) R); Jacobians are taken w.r.t. delta.
struct ParameterLayout {
  std::vector<Eigen::Index> rotation_blocks;  // offsets of 3-vectors
};

/// x (+) delta under `layout`.
Eigen::VectorXd plus(const ParameterLayout& layout, const Eigen::VectorXd& x,
                     const Eigen::VectorXd& delta);

struct LeastSquaresProblem {
  Eigen::Index num_params = 0;
  Eigen::Index num_residuals = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> residual;
  /// Optional analytic Jacobian (num_residuals x num_params) w.r.t. the local
  /// increment. Central differences are used when empty.
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> jacobian;
  ParameterLayout layout;
};

struct SolveOptions {
  int max_iter = 100;
  double gradient_tol = 1e-10;
  double step_tol = 1e-12;
  double lambda0 = 1e-3;
};

enum class Termination { gradient_tol, step_tol, max_iter, diverged };
const char* to_string(Termination t);

struct SolveReport {
  int iterations = 0;  // accepted steps
  double initial_cost = 0.0;
  double final_cost = 0.0;  // 0.5 * |r|^2
  Termination termination = Termination::max_iter;
  double final_gradient_norm = 0.0;  // max-norm of J^T r
  std::vector<double> accepted_costs;  // initial cost followed by each accepted step

  bool strictly_decreasing() const;
};

struct SolveResult {
  Eigen::VectorXd x;
  SolveReport report;
};

/// Minimizes 0.5 * |r(x)|^2. Throws SolveError when the residual cannot be
/// evaluated at x0 or the cost becomes non-finite.
SolveResult lm_minimize(const LeastSquaresProblem& problem, const Eigen::VectorXd& x0,
                        const SolveOptions& opts = {});

/// Central differences with step eps * max(1, |x_j|), through `plus`.
Eigen::MatrixXd numeric_jacobian(const LeastSquaresProblem& problem,
                                 const Eigen::VectorXd& x, double eps = 1e-6);

/// Largest |a - b| / max(1, |b|) over all entries.
double max_relative_deviation(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Rotation R minimizing sum w_i |R a_i - b_i|^2 (SVD of the weighted
/// cross-covariance with determinant correction). Throws DegenerateError
/// unless at least two non-parallel a-vectors carry positive weight.
geom::Mat3 solve_rotation_alignment(std::span<const geom::Vec3> a,
                                    std::span<const geom::Vec3> b,
                                    std::span<const double> weights = {});

}  // namespace ocular::solve
