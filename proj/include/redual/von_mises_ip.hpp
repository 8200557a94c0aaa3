#pragma once

// Adapter presenting a von Mises increment as a generic IpProblem, so the
// dual-bisection oracle can cross-check the closed-form return map.

#include "redual/ip_problem.hpp"
#include "redual/von_mises.hpp"

#include <cmath>

namespace redual {

namespace detail {

/// Inverts the hardening relation stress(alpha) = zeta (monotone in alpha).
inline double invert_hardening(const IsotropicHardening& law, double zeta, double hint) {
  if (!std::isfinite(zeta)) return std::numeric_limits<double>::quiet_NaN();
  double a = hint;
  for (int it = 0; it < 100; ++it) {
    const double r = law.stress(a) - zeta;
    if (std::abs(r) <= 1e-14 * (1.0 + std::abs(zeta))) return a;
    const double m = law.modulus(a);
    if (m <= 0.0)
      throw NumericalError("invert_hardening: hardening law is not strictly monotone");
    a -= r / m;
  }
  throw NumericalError("invert_hardening: no convergence");
}

} // namespace detail

/// IpProblem for one von Mises integration-point increment. The stacked
/// variable is [sigma; zeta_kh; zeta_ih] with kinematic hardening and
/// [sigma; zeta_ih] without. Requires a strictly monotone hardening law
/// (the complementary hardening energy must be smooth and finite).
inline IpProblem make_ip_problem(const VonMisesModel& model, const MaterialState& prev,
                                 const Vec& d_eps) {
  require(d_eps.size() == model.n_sigma(), "make_ip_problem: strain increment size mismatch");
  const Index n = model.n_sigma();
  const bool kin = model.has_kinematic();
  const Index nz = kin ? n + 1 : 1;

  IpProblem p;
  p.n_sigma = n;
  p.n_zeta = nz;
  p.n_yield = 1;
  p.scales.stationarity = model.reference_strain();
  p.scales.phi = model.sigma_y();
  p.scales.lambda = model.reference_strain();

  p.drive_sigma = d_eps + model.elastic_inv() * prev.sigma;
  p.drive_zeta = Vec::Zero(nz);
  if (kin) p.drive_zeta.head(n) = model.kinematic_inv() * prev.zeta_kh;
  p.drive_zeta[nz - 1] = prev.alpha_ih;

  // Capture the model by reference: problems never outlive their model here.
  const VonMisesModel* m = &model;
  const double alpha_seed = prev.alpha_ih;
  const auto alpha_of = [m, alpha_seed](double zih) {
    return detail::invert_hardening(m->hardening(), zih, alpha_seed);
  };

  p.psic = [m, n, kin, nz, alpha_of](const Vec& x) {
    const auto sigma = x.head(n);
    double v = 0.5 * sigma.dot(m->elastic_inv() * sigma);
    if (kin) {
      const auto zkh = x.segment(n, n);
      v += 0.5 * zkh.dot(m->kinematic_inv() * zkh);
    }
    const double zih = x[n + nz - 1];
    const double a = alpha_of(zih);
    v += zih * a - m->hardening().energy(a);
    return v;
  };
  p.psic_grad = [m, n, kin, nz, alpha_of](const Vec& x) {
    Vec g(n + nz);
    g.head(n) = m->elastic_inv() * x.head(n);
    if (kin) g.segment(n, n) = m->kinematic_inv() * x.segment(n, n);
    g[n + nz - 1] = alpha_of(x[n + nz - 1]);
    return g;
  };
  p.psic_hess = [m, n, kin, nz, alpha_of](const Vec& x) {
    Mat h = Mat::Zero(n + nz, n + nz);
    h.topLeftCorner(n, n) = m->elastic_inv();
    if (kin) h.block(n, n, n, n) = m->kinematic_inv();
    const double a = alpha_of(x[n + nz - 1]);
    h(n + nz - 1, n + nz - 1) = 1.0 / m->hardening().modulus(a);
    return h;
  };

  const auto relative = [n, kin](const Vec& x) {
    return kin ? Vec(x.head(n) - x.segment(n, n)) : Vec(x.head(n));
  };
  p.phi = [m, nz, n, relative](const Vec& x) {
    const Vec d = relative(x);
    Vec f(1);
    f[0] = std::sqrt(d.dot(m->yield_form() * d)) - kSqrt23 * (m->sigma_y() + x[n + nz - 1]);
    return f;
  };
  p.phi_jacobian = [m, n, kin, nz, relative](const Vec& x) {
    const Vec d = relative(x);
    const Vec pd = m->yield_form() * d;
    const double rho = std::sqrt(d.dot(pd));
    Mat j = Mat::Zero(1, n + nz);
    j.block(0, 0, 1, n) = (pd / rho).transpose();
    if (kin) j.block(0, n, 1, n) = -(pd / rho).transpose();
    j(0, n + nz - 1) = -kSqrt23;
    return j;
  };
  p.phi_hessian = [m, n, kin, nz, relative](const Vec& x, Index) {
    const Vec d = relative(x);
    const Vec pd = m->yield_form() * d;
    const double rho = std::sqrt(d.dot(pd));
    const Vec nhat = pd / rho;
    const Mat w = (m->yield_form() - nhat * nhat.transpose()) / rho;
    Mat h = Mat::Zero(n + nz, n + nz);
    h.topLeftCorner(n, n) = w;
    if (kin) {
      h.block(0, n, n, n) = -w;
      h.block(n, 0, n, n) = -w;
      h.block(n, n, n, n) = w;
    }
    return h;
  };
  return p;
}

/// Repackages an oracle solution as a material state (for comparisons).
inline MaterialState state_from_solution(const VonMisesModel& model, const IpProblem& p,
                                         const IpSolution& sol) {
  const Index n = model.n_sigma();
  MaterialState s = MaterialState::zero(n);
  s.sigma = sol.x.head(n);
  if (model.has_kinematic()) s.zeta_kh = sol.x.segment(n, n);
  s.zeta_ih = sol.x[n + p.n_zeta - 1];
  s.alpha_ih = detail::invert_hardening(model.hardening(), s.zeta_ih, 0.0);
  return s;
}

} // namespace redual
