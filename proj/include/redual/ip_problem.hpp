#pragma once

// Model-agnostic solver for the integration-point convex program
//
//   min  psic(sigma, zeta) - drive_sigma . sigma - drive_zeta . zeta
//   s.t. phi_k(sigma, zeta) <= 0,  k = 1..n_yield
//
// solved through its dual: for fixed multipliers the Lagrangian is smooth and
// strongly convex and is minimized by damped Newton; the multipliers are then
// found by bisection (one constraint) or projected coordinate ascent. This
// path is deliberately different from the closed-form return map so the two
// can check each other.

#include "redual/types.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <utility>

namespace redual {

/// Scales used to nondimensionalize KKT residuals.
struct ResidualScales {
  double stationarity = 1.0;
  double phi = 1.0;
  double lambda = 1.0;
};

/// Convex integration-point problem over the stacked variable x = [sigma; zeta].
struct IpProblem {
  Index n_sigma = 0;
  Index n_zeta = 0;
  Index n_yield = 0;

  std::function<double(const Vec&)> psic;
  std::function<Vec(const Vec&)> psic_grad;
  std::function<Mat(const Vec&)> psic_hess;

  std::function<Vec(const Vec&)> phi;                 ///< length n_yield
  std::function<Mat(const Vec&)> phi_jacobian;        ///< n_yield x (n_sigma + n_zeta)
  std::function<Mat(const Vec&, Index)> phi_hessian;  ///< Hessian of component k

  Vec drive_sigma;
  Vec drive_zeta;
  ResidualScales scales;

  Index size() const { return n_sigma + n_zeta; }

  Vec drive() const {
    Vec d(size());
    d << drive_sigma, drive_zeta;
    return d;
  }
};

struct IpSolution {
  Vec x;       ///< stacked [sigma; zeta]
  Vec lambda;  ///< multipliers, length n_yield
  double objective = 0.0;

  Vec sigma(const IpProblem& p) const { return x.head(p.n_sigma); }
  Vec zeta(const IpProblem& p) const { return x.tail(p.n_zeta); }
};

/// Inner Lagrangian minimization stalled short of tolerance. For yield
/// functions with a nonsmooth apex this happens exactly when the minimizer
/// sits at the apex, where the constraint is strictly satisfied.
class LagrangianStall : public NumericalError {
public:
  using NumericalError::NumericalError;
};

/// Oracle failure that still carries the last iterate for diagnosis.
class OracleStall : public NumericalError {
public:
  OracleStall(const std::string& what, Vec x, Vec lambda, double residual)
      : NumericalError(what), last_x(std::move(x)), last_lambda(std::move(lambda)),
        last_residual(residual) {}
  Vec last_x;
  Vec last_lambda;
  double last_residual = 0.0;
};

/// Max-norm KKT residual of the integration-point problem, nondimensionalized
/// component group by component group with the problem's scales.
inline double kkt_residual(const IpProblem& p, const Vec& x, const Vec& lambda) {
  Vec g = p.psic_grad(x) - p.drive();
  if ((lambda.array() != 0.0).any()) {
    const Mat j = p.phi_jacobian(x);
    for (Index k = 0; k < p.n_yield; ++k)
      if (lambda[k] != 0.0) g += lambda[k] * j.row(k).transpose();
  }
  const Vec f = p.phi(x);
  double r = g.cwiseAbs().maxCoeff() / p.scales.stationarity;
  for (Index k = 0; k < p.n_yield; ++k) {
    r = std::max(r, std::max(f[k], 0.0) / p.scales.phi);
    r = std::max(r, std::max(-lambda[k], 0.0) / p.scales.lambda);
  }
  r = std::max(r, std::abs(lambda.dot(f)) / (p.scales.lambda * p.scales.phi));
  return r;
}

/// Unconstrained minimizer of the Lagrangian for fixed multipliers lambda >= 0
/// (damped Newton). Throws NumericalError if a Hessian fails to be positive
/// definite, which signals a model violating the convexity contract.
inline Vec lagrangian_min(const IpProblem& p, const Vec& lambda, Vec x0 = Vec()) {
  require((lambda.array() >= 0.0).all(), "lagrangian_min: multipliers must be nonnegative");
  const Vec drive = p.drive();
  Vec x = x0.size() == p.size() ? std::move(x0) : Vec(Vec::Zero(p.size()));

  const bool active = (lambda.array() != 0.0).any();
  const auto value = [&](const Vec& z) { return p.psic(z) + lambda.dot(p.phi(z)) - drive.dot(z); };
  // Constraint rows with a zero multiplier are skipped: their gradients may
  // be undefined at points the iteration passes through (e.g. the von Mises
  // apex) and contribute nothing.
  const auto grad = [&](const Vec& z) {
    Vec g = p.psic_grad(z) - drive;
    if (active) {
      const Mat j = p.phi_jacobian(z);
      for (Index k = 0; k < p.n_yield; ++k)
        if (lambda[k] != 0.0) g += lambda[k] * j.row(k).transpose();
    }
    return g;
  };

  // Aim a couple of digits below the contract tolerance: the outer dual
  // iteration differences nearby minimizers, so headroom here is what makes
  // complementarity resolvable downstream.
  const double tol_goal = 1e-14 * p.scales.stationarity;
  const double tol_accept = 1e-12 * p.scales.stationarity;
  double fx = value(x);
  Vec x_best = x;
  double g_best = std::numeric_limits<double>::infinity();
  int stalled = 0;
  for (int it = 0; it < 200; ++it) {
    const Vec g = grad(x);
    const double gn = g.cwiseAbs().maxCoeff();
    if (gn < g_best) {
      g_best = gn;
      x_best = x;
      stalled = 0;
    } else if (++stalled >= 3) {
      break;  // roundoff floor reached
    }
    if (gn <= tol_goal) return x;
    Mat h = p.psic_hess(x);
    for (Index k = 0; k < p.n_yield; ++k)
      if (lambda[k] != 0.0) h += lambda[k] * p.phi_hessian(x, k);
    Eigen::LLT<Mat> llt(h);
    if (llt.info() != Eigen::Success)
      throw NumericalError("lagrangian_min: Lagrangian Hessian not positive definite");
    const Vec dx = llt.solve(-g);
    double s = 1.0;
    const double slope = g.dot(dx);
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      const double trial = value(x + s * dx);
      if (std::isfinite(trial) && trial <= fx + 1e-4 * s * slope) {
        accepted = true;
        break;
      }
      s *= 0.5;
    }
    if (!accepted) break;  // direction unusable (typically a nonsmooth apex)
    x += s * dx;
    fx = value(x);
  }
  if (g_best > tol_accept)
    throw LagrangianStall("lagrangian_min: damped Newton failed to converge");
  return x_best;
}

namespace detail {

/// Bisection for the root of g(t) = phi_k(x*(lambda with component k = t))
/// over t >= 0. Assumes g is nonincreasing; returns t and the warm-started x.
/// An inner stall means the minimizer reached the constraint's apex, which
/// lies strictly inside the feasible set, so it counts as g < 0.
inline std::pair<double, Vec> dual_root(const IpProblem& p, Vec lambda, Index k, Vec x) {
  const auto below = [&](double t, Vec& xs) {
    lambda[k] = t;
    try {
      xs = lagrangian_min(p, lambda, std::move(xs));
    } catch (const LagrangianStall&) {
      return true;
    }
    return p.phi(xs)[k] < 0.0;
  };

  lambda[k] = 0.0;
  x = lagrangian_min(p, lambda, std::move(x));
  if (p.phi(x)[k] <= 0.0) return {0.0, std::move(x)};

  double lo = 0.0;
  double hi = 1e-8;
  for (int grow = 0; !below(hi, x); ++grow) {
    if (grow > 200)
      throw NumericalError("solve_ip_oracle: dual variable bracket not found");
    lo = hi;
    hi *= 2.0;
  }
  // Bisect essentially to machine precision; the inner solves are warm
  // started, so the extra depth beyond the nominal 1e-12 interval is cheap
  // and buys complementarity headroom.
  const double width = 4.0 * std::numeric_limits<double>::epsilon() * hi;
  while (hi - lo > width) {
    const double mid = 0.5 * (lo + hi);
    if (below(mid, x)) hi = mid; else lo = mid;
  }
  const double t = 0.5 * (lo + hi);
  lambda[k] = t;
  x = lagrangian_min(p, lambda, std::move(x));
  return {t, std::move(x)};
}

} // namespace detail

/// Solves the integration-point problem to the requested KKT residual.
/// One yield function: bisection on the scalar dual variable. Several:
/// projected coordinate ascent, one scalar dual solve per coordinate sweep.
inline IpSolution solve_ip_oracle(const IpProblem& p, double tol) {
  require(p.n_yield >= 1, "solve_ip_oracle: need at least one yield function");
  Vec lambda = Vec::Zero(p.n_yield);
  Vec x = lagrangian_min(p, lambda);

  if (p.n_yield == 1) {
    auto [t, xs] = detail::dual_root(p, lambda, 0, std::move(x));
    lambda[0] = t;
    x = std::move(xs);
  } else {
    bool done = false;
    for (int sweep = 0; sweep < 200 && !done; ++sweep) {
      for (Index k = 0; k < p.n_yield; ++k) {
        auto [t, xs] = detail::dual_root(p, lambda, k, std::move(x));
        lambda[k] = t;
        x = std::move(xs);
      }
      done = kkt_residual(p, x, lambda) <= tol;
    }
    if (!done)
      throw OracleStall("solve_ip_oracle: coordinate ascent stalled", x, lambda,
                        kkt_residual(p, x, lambda));
  }

  const double res = kkt_residual(p, x, lambda);
  if (res > tol)
    throw OracleStall("solve_ip_oracle: KKT residual above tolerance", x, lambda, res);
  const double objective = p.psic(x) - p.drive().dot(x);
  return {std::move(x), std::move(lambda), objective};
}

} // namespace redual
