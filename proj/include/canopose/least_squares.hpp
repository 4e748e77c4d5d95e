#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "canopose/types.hpp"

namespace canopose {

// Residual function for the damped Gauss-Newton solver. evaluate() returns
// false when x is outside the feasible region (e.g. a keypoint moved behind
// the camera); the solver treats such trial points as rejected steps.
// jacobian may be null when only residual values are needed.
class LeastSquaresProblem {
 public:
  virtual ~LeastSquaresProblem() = default;
  virtual int num_parameters() const = 0;
  virtual int num_residuals() const = 0;
  virtual bool evaluate(const VecX& x, VecX* residuals, MatX* jacobian) const = 0;
};

enum class Termination {
  gradient,            // gradient max-norm below tolerance
  step,                // step norm below tolerance
  relative_decrease,   // accepted step improved the cost too little
  max_iterations,
  stalled,             // damping grew past its ceiling without an acceptable step
};

inline const char* termination_name(Termination t) {
  switch (t) {
    case Termination::gradient: return "gradient";
    case Termination::step: return "step";
    case Termination::relative_decrease: return "relative_decrease";
    case Termination::max_iterations: return "max_iterations";
    case Termination::stalled: return "stalled";
  }
  return "unknown";
}

struct SolveOptions {
  int max_iterations = 100;
  double tol_step = 1e-10;
  double tol_gradient = 1e-8;
  // 0 disables the relative-decrease criterion.
  double tol_relative_decrease = 0.0;
  double damping_init = 1e-4;
  // Rejected steps multiply damping by damping_up (doubling the factor on
  // consecutive rejects); accepted steps shrink it by the Nielsen gain-ratio
  // rule, floored at damping_down.
  double damping_up = 2.0;
  double damping_down = 1.0 / 3.0;
  double damping_max = 1e14;
  double damping_min = 1e-18;

  void validate() const {
    if (max_iterations < 1 || !(tol_step > 0.0) || !(tol_gradient > 0.0) ||
        tol_relative_decrease < 0.0 || !(damping_init > 0.0) ||
        !(damping_up > 1.0) || !(damping_down > 0.0) || damping_down >= 1.0) {
      throw FitError("SolveOptions: invalid tolerance or damping schedule");
    }
  }
};

struct SolveDiagnostics {
  int iterations = 0;       // step attempts
  int accepted_steps = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  double final_gradient_norm = 0.0;  // max-norm of d|r|^2/dx
  Termination termination = Termination::max_iterations;
  // Cost after each accepted step, starting with the initial cost. Strictly
  // decreasing by construction.
  std::vector<double> cost_trace;
};

/// Levenberg-Marquardt with multiplicative damping on the scaled diagonal:
/// solves (J^T J + mu * diag(J^T J)) dx = -J^T r, accepts only strict cost
/// decreases, and scales mu down/up on accept/reject. Deterministic: identical
/// inputs produce identical iterates. Cost convention: |r|^2.
inline VecX solve_least_squares(const LeastSquaresProblem& problem, VecX x,
                                const SolveOptions& opts = {},
                                SolveDiagnostics* diagnostics = nullptr) {
  opts.validate();
  const int n = problem.num_parameters();
  if (x.size() != n) {
    throw FitError("solve_least_squares: initial point has wrong dimension");
  }

  VecX residuals(problem.num_residuals());
  MatX jacobian(problem.num_residuals(), n);
  if (!problem.evaluate(x, &residuals, &jacobian) || !residuals.allFinite() ||
      !jacobian.allFinite()) {
    throw FitError("solve_least_squares: residuals not finite at the initial point");
  }

  SolveDiagnostics diag;
  double cost = residuals.squaredNorm();
  diag.initial_cost = cost;
  diag.cost_trace.push_back(cost);

  VecX gradient = jacobian.transpose() * residuals;  // (1/2) d|r|^2/dx
  auto gradient_norm = [&gradient]() {
    return 2.0 * gradient.cwiseAbs().maxCoeff();
  };

  double mu = opts.damping_init;
  double reject_factor = opts.damping_up;
  Termination reason = Termination::max_iterations;
  if (gradient_norm() <= opts.tol_gradient) {
    reason = Termination::gradient;  // stationary init: zero accepted steps
  } else {
    MatX hessian_base(n, n);
    MatX hessian(n, n);
    VecX trial_residuals(problem.num_residuals());
    bool hessian_fresh = false;
    while (diag.iterations < opts.max_iterations) {
      ++diag.iterations;
      if (!hessian_fresh) {
        hessian_base.setZero();
        hessian_base.selfadjointView<Eigen::Lower>().rankUpdate(jacobian.transpose());
        hessian_base = hessian_base.selfadjointView<Eigen::Lower>();
        hessian_fresh = true;
      }
      hessian = hessian_base;
      const VecX scaled = hessian_base.diagonal().cwiseMax(1e-12);
      hessian.diagonal() += mu * scaled;
      const VecX step = hessian.ldlt().solve(-gradient);
      if (!step.allFinite()) {
        mu *= reject_factor;
        reject_factor *= 2.0;
        if (mu > opts.damping_max) { reason = Termination::stalled; break; }
        continue;
      }
      if (step.norm() <= opts.tol_step * (x.norm() + opts.tol_step)) {
        reason = Termination::step;
        break;
      }
      const VecX trial = x + step;
      const bool feasible = problem.evaluate(trial, &trial_residuals, nullptr) &&
                            trial_residuals.allFinite();
      const double trial_cost = feasible ? trial_residuals.squaredNorm() : cost;
      if (feasible && trial_cost < cost) {
        // Nielsen gain ratio: actual vs model decrease (both in 0.5*|r|^2
        // units, the 0.5 factors cancel in the ratio)
        const double predicted = step.dot(mu * scaled.cwiseProduct(step) - gradient);
        const double rho = predicted > 0.0 ? (cost - trial_cost) / predicted : 1.0;
        const double shrink = 1.0 - std::pow(2.0 * rho - 1.0, 3);
        mu = std::max(mu * std::max(opts.damping_down, shrink), opts.damping_min);
        reject_factor = opts.damping_up;

        const double relative = (cost - trial_cost) / std::max(cost, 1e-300);
        x = trial;
        cost = trial_cost;
        if (!problem.evaluate(x, &residuals, &jacobian) || !residuals.allFinite() ||
            !jacobian.allFinite()) {
          throw FitError("solve_least_squares: accepted point failed re-evaluation");
        }
        gradient.noalias() = jacobian.transpose() * residuals;
        hessian_fresh = false;
        diag.cost_trace.push_back(cost);
        ++diag.accepted_steps;
        if (gradient_norm() <= opts.tol_gradient) {
          reason = Termination::gradient;
          break;
        }
        if (opts.tol_relative_decrease > 0.0 &&
            relative <= opts.tol_relative_decrease) {
          reason = Termination::relative_decrease;
          break;
        }
      } else {
        // infeasible or non-decreasing: back the step off by raising damping
        mu *= reject_factor;
        reject_factor *= 2.0;
        if (mu > opts.damping_max) {
          reason = Termination::stalled;
          break;
        }
      }
    }
  }

  diag.final_cost = cost;
  diag.final_gradient_norm = gradient_norm();
  diag.termination = reason;
  if (diagnostics != nullptr) *diagnostics = diag;
  return x;
}

// Adapter for quick lambda-defined problems (used heavily in tests).
class FunctionProblem final : public LeastSquaresProblem {
 public:
  using Fn = std::function<bool(const VecX&, VecX*, MatX*)>;
  FunctionProblem(int n_params, int n_residuals, Fn fn)
      : n_params_(n_params), n_residuals_(n_residuals), fn_(std::move(fn)) {}
  int num_parameters() const override { return n_params_; }
  int num_residuals() const override { return n_residuals_; }
  bool evaluate(const VecX& x, VecX* r, MatX* j) const override {
    return fn_(x, r, j);
  }

 private:
  int n_params_;
  int n_residuals_;
  Fn fn_;
};

}  // namespace canopose
