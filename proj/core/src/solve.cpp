// SPDX-License-Identifier: Apache-2.0
#include "ocular/solve.hpp"

#include "ocular/error.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>

namespace ocular::solve {

using Eigen::MatrixXd;
using Eigen::VectorXd;

const char* to_string(Termination t) {
  switch (t) {
    case Termination::gradient_tol: return "gradient_tol";
    case Termination::step_tol: return "step_tol";
    case Termination::max_iter: return "max_iter";
    case Termination::diverged: return "diverged";
  }
  return "unknown";
}

bool SolveReport::strictly_decreasing() const {
  for (std::size_t i = 1; i < accepted_costs.size(); ++i) {
    if (!(accepted_costs[i] < accepted_costs[i - 1])) return false;
  }
  return true;
}

VectorXd plus(const ParameterLayout& layout, const VectorXd& x, const VectorXd& delta) {
  VectorXd out = x + delta;
  for (Eigen::Index off : layout.rotation_blocks) {
    const geom::Vec3 w = x.segment<3>(off);
    const geom::Vec3 dw = delta.segment<3>(off);
    out.segment<3>(off) = geom::log_so3(geom::exp_so3(dw) * geom::exp_so3(w));
  }
  return out;
}

namespace {

VectorXd evaluate(const LeastSquaresProblem& problem, const VectorXd& x) {
  VectorXd r = problem.residual(x);
  if (r.size() != problem.num_residuals) {
    throw SolveError("residual function returned " + std::to_string(r.size()) +
                     " entries, expected " + std::to_string(problem.num_residuals));
  }
  return r;
}

MatrixXd jacobian_at(const LeastSquaresProblem& problem, const VectorXd& x) {
  if (problem.jacobian) return problem.jacobian(x);
  return numeric_jacobian(problem, x);
}

}  // namespace

MatrixXd numeric_jacobian(const LeastSquaresProblem& problem, const VectorXd& x, double eps) {
  MatrixXd jac(problem.num_residuals, problem.num_params);
  VectorXd delta = VectorXd::Zero(problem.num_params);
  try {
    for (Eigen::Index j = 0; j < problem.num_params; ++j) {
      const double h = eps * std::max(1.0, std::abs(x[j]));
      delta[j] = h;
      const VectorXd rp = evaluate(problem, plus(problem.layout, x, delta));
      delta[j] = -h;
      const VectorXd rm = evaluate(problem, plus(problem.layout, x, delta));
      delta[j] = 0.0;
      jac.col(j) = (rp - rm) / (2.0 * h);
    }
  } catch (const SolveError&) {
    throw;
  } catch (const std::exception& e) {
    throw SolveError(std::string("residual evaluation failed during differentiation: ") + e.what());
  }
  return jac;
}

double max_relative_deviation(const MatrixXd& a, const MatrixXd& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / std::max(1.0, std::abs(b(i, j))));
    }
  }
  return worst;
}

SolveResult lm_minimize(const LeastSquaresProblem& problem, const VectorXd& x0,
                        const SolveOptions& opts) {
  if (x0.size() != problem.num_params) throw SolveError("initial parameter size mismatch");
  if (problem.num_residuals < problem.num_params) {
    throw SolveError("problem has fewer residuals than parameters");
  }

  SolveResult result{x0, {}};
  SolveReport& rep = result.report;

  VectorXd r;
  try {
    r = evaluate(problem, x0);
  } catch (const SolveError&) {
    throw;
  } catch (const std::exception& e) {
    throw SolveError(std::string("residual evaluation failed at the initial point: ") + e.what());
  }
  double cost = 0.5 * r.squaredNorm();
  if (!std::isfinite(cost)) throw SolveError("diverged: non-finite initial cost");
  rep.initial_cost = cost;
  rep.accepted_costs.push_back(cost);

  double lambda = opts.lambda0;
  VectorXd& x = result.x;
  MatrixXd jac = jacobian_at(problem, x);
  VectorXd grad = jac.transpose() * r;
  MatrixXd jtj = jac.transpose() * jac;

  int evaluations = 0;
  rep.termination = Termination::max_iter;
  while (true) {
    if (grad.lpNorm<Eigen::Infinity>() <= opts.gradient_tol || cost == 0.0) {
      rep.termination = Termination::gradient_tol;
      break;
    }
    if (rep.iterations >= opts.max_iter || evaluations >= 20 * opts.max_iter) {
      rep.termination = Termination::max_iter;
      break;
    }

    VectorXd diag = jtj.diagonal();
    const double diag_floor = 1e-12 * std::max(1.0, diag.maxCoeff());
    for (Eigen::Index i = 0; i < diag.size(); ++i) diag[i] = std::max(diag[i], diag_floor);
    MatrixXd damped = jtj;
    damped.diagonal() += lambda * diag;
    Eigen::LDLT<MatrixXd> ldlt(damped);
    VectorXd step = ldlt.solve(-grad);
    ++evaluations;
    if (ldlt.info() != Eigen::Success || !step.allFinite()) {
      lambda *= 10.0;
      continue;
    }

    if (step.norm() <= opts.step_tol * (x.norm() + opts.step_tol)) {
      rep.termination = Termination::step_tol;
      break;
    }

    const VectorXd trial = plus(problem.layout, x, step);
    VectorXd trial_r;
    bool evaluated = true;
    try {
      trial_r = evaluate(problem, trial);
    } catch (const std::exception&) {
      evaluated = false;  // treat as a rejected step
    }
    const double trial_cost = evaluated ? 0.5 * trial_r.squaredNorm() : std::numeric_limits<double>::infinity();
    if (evaluated && std::isnan(trial_cost)) {
      rep.termination = Termination::diverged;
      rep.final_cost = cost;
      throw SolveError("diverged: non-finite cost after step");
    }

    if (trial_cost < cost) {
      x = trial;
      r = std::move(trial_r);
      cost = trial_cost;
      rep.accepted_costs.push_back(cost);
      ++rep.iterations;
      lambda = std::max(lambda / 10.0, 1e-12);
      jac = jacobian_at(problem, x);
      grad = jac.transpose() * r;
      jtj = jac.transpose() * jac;
    } else {
      lambda *= 10.0;
      if (lambda > 1e32) {
        rep.termination = Termination::step_tol;
        break;
      }
    }
  }

  rep.final_cost = cost;
  rep.final_gradient_norm = grad.lpNorm<Eigen::Infinity>();
  return result;
}

geom::Mat3 solve_rotation_alignment(std::span<const geom::Vec3> a, std::span<const geom::Vec3> b,
                                    std::span<const double> weights) {
  if (a.size() != b.size()) throw InputError("rotation alignment needs paired vectors");
  if (!weights.empty() && weights.size() != a.size()) {
    throw InputError("rotation alignment weight count mismatch");
  }
  auto weight = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };

  bool independent = false;
  for (std::size_t i = 0; i < a.size() && !independent; ++i) {
    if (!(weight(i) > 0.0)) continue;
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      if (weight(j) > 0.0 && a[i].normalized().cross(a[j].normalized()).norm() > 1e-9) {
        independent = true;
        break;
      }
    }
  }
  if (!independent) {
    throw DegenerateError("rotation alignment needs at least two non-parallel directions");
  }

  geom::Mat3 cov = geom::Mat3::Zero();
  for (std::size_t i = 0; i < a.size(); ++i) cov += weight(i) * b[i] * a[i].transpose();
  Eigen::JacobiSVD<geom::Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const geom::Mat3 u = svd.matrixU();
  const geom::Mat3 v = svd.matrixV();
  geom::Mat3 s = geom::Mat3::Identity();
  s(2, 2) = (u * v.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return u * s * v.transpose();
}

}  // namespace ocular::solve
