#pragma once

// Small-strain von Mises elastoplasticity with linear elasticity, optional
// linear kinematic hardening and a (possibly nonlinear) isotropic hardening
// law. The incremental stress update solves the integration-point convex
// program in closed form: a single scalar equation in the equivalent plastic
// strain, posed in the coordinates that simultaneously diagonalize the
// elastic, kinematic and yield-form matrices.

#include "redual/types.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <utility>

namespace redual {

enum class DimMode { PlaneStress, ThreeD };

constexpr Index stress_size(DimMode mode) {
  return mode == DimMode::PlaneStress ? 3 : 6;
}

inline constexpr double kSqrt23 = 0.81649658092772603273;  // sqrt(2/3)
inline constexpr double kSqrt32 = 1.22474487139158904910;  // sqrt(3/2)

/// Isotropic hardening law, parametrized by the equivalent plastic strain:
/// stress(a) is the hardening stress conjugate to a, modulus(a) its slope,
/// energy(a) the stored hardening energy. linear(h) gives stress = h*a.
struct IsotropicHardening {
  std::function<double(double)> stress;
  std::function<double(double)> modulus;
  std::function<double(double)> energy;

  static IsotropicHardening linear(double h) {
    require(h >= 0.0, "IsotropicHardening::linear: modulus must be >= 0");
    return {[h](double a) { return h * a; },
            [h](double) { return h; },
            [h](double a) { return 0.5 * h * a * a; }};
  }
};

struct PQPair {
  Mat P;  ///< quadratic form of the yield function
  Mat Q;  ///< orthogonal matrix diagonalizing P, C and H
};

/// Yield-form matrix P and diagonalizing matrix Q for the given mode.
/// Strain/stress vectors use engineering shear components throughout.
inline PQPair pq_matrices(DimMode mode) {
  if (mode == DimMode::PlaneStress) {
    Mat P(3, 3);
    P << 2, -1, 0,
        -1, 2, 0,
         0, 0, 6;
    P /= 3.0;
    const double s = 1.0 / std::sqrt(2.0);
    Mat Q(3, 3);
    Q << s, s, 0,
         s, -s, 0,
         0, 0, 1;
    return {P, Q};
  }
  Mat P = Mat::Zero(6, 6);
  P.topLeftCorner(3, 3) << 2, -1, -1,
                          -1, 2, -1,
                          -1, -1, 2;
  P.bottomRightCorner(3, 3) = 6.0 * Mat::Identity(3, 3);
  P /= 3.0;
  const double a = 1.0 / std::sqrt(3.0);
  const double b = std::sqrt(2.0 / 3.0);
  const double c = 1.0 / std::sqrt(6.0);
  const double d = 1.0 / std::sqrt(2.0);
  Mat Q = Mat::Identity(6, 6);
  Q.topLeftCorner(3, 3) << a, b, 0,
                           a, -c, d,
                           a, -c, -d;
  return {P, Q};
}

/// Isotropic elastic moduli from (E, nu); plane stress uses the reduced
/// 3x3 matrix, 3D the full 6x6 with shear diagonal G (engineering shear).
inline Mat isotropic_moduli(DimMode mode, double youngs, double poisson) {
  require(youngs > 0.0, "isotropic_moduli: Young's modulus must be > 0");
  require(poisson > -1.0 && poisson < 0.5, "isotropic_moduli: Poisson ratio out of range");
  if (mode == DimMode::PlaneStress) {
    const double f = youngs / (1.0 - poisson * poisson);
    Mat C(3, 3);
    C << f, poisson * f, 0,
         poisson * f, f, 0,
         0, 0, 0.5 * (1.0 - poisson) * f;
    return C;
  }
  const double lame = youngs * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
  const double shear = 0.5 * youngs / (1.0 + poisson);
  Mat C = Mat::Zero(6, 6);
  C.topLeftCorner(3, 3).setConstant(lame);
  C.topLeftCorner(3, 3) += 2.0 * shear * Mat::Identity(3, 3);
  C.bottomRightCorner(3, 3) = shear * Mat::Identity(3, 3);
  return C;
}

/// Constitutive model data. Immutable after construction; all member
/// matrices are validated against the simultaneous-diagonalization premise
/// the closed-form return map relies on.
class VonMisesModel {
public:
  VonMisesModel(DimMode mode, Mat elastic, double sigma_y, IsotropicHardening iso,
                std::optional<Mat> kinematic = std::nullopt)
      : mode_(mode),
        C_(std::move(elastic)),
        H_(std::move(kinematic)),
        sigma_y_(sigma_y),
        iso_(std::move(iso)) {
    const Index n = stress_size(mode_);
    require(C_.rows() == n && C_.cols() == n, "VonMisesModel: elastic matrix size mismatch");
    require(sigma_y_ > 0.0, "VonMisesModel: yield stress must be > 0");
    require(static_cast<bool>(iso_.stress) && static_cast<bool>(iso_.modulus) &&
                static_cast<bool>(iso_.energy),
            "VonMisesModel: incomplete hardening law");
    auto pq = pq_matrices(mode_);
    P_ = std::move(pq.P);
    Q_ = std::move(pq.Q);
    check_orthogonal();

    Eigen::LLT<Mat> llt(C_);
    if (llt.info() != Eigen::Success)
      throw ContractViolation("VonMisesModel: elastic matrix not positive definite");
    C_inv_ = llt.solve(Mat::Identity(n, n));

    Mat CH = C_;
    if (H_) {
      require(H_->rows() == n && H_->cols() == n, "VonMisesModel: kinematic matrix size mismatch");
      Eigen::LLT<Mat> hllt(*H_);
      if (hllt.info() != Eigen::Success)
        throw ContractViolation("VonMisesModel: kinematic matrix not positive definite");
      H_inv_ = hllt.solve(Mat::Identity(n, n));
      CH += *H_;
    }

    lambda_P_ = extract_diagonal(Q_.transpose() * P_ * Q_, "P");
    extract_diagonal(Q_.transpose() * C_ * P_ * Q_, "C*P");
    lambda_CHP_ = extract_diagonal(Q_.transpose() * CH * P_ * Q_, "(C+H)*P");
    if (mode_ == DimMode::ThreeD)
      require(std::abs(lambda_P_[0]) <= 1e-14, "VonMisesModel: deviatoric structure violated");

    reference_strain_ = sigma_y_ / C_.diagonal().maxCoeff();
  }

  static VonMisesModel isotropic(DimMode mode, double youngs, double poisson, double sigma_y,
                                 IsotropicHardening iso, double kinematic_youngs = 0.0) {
    std::optional<Mat> H;
    if (kinematic_youngs > 0.0)
      H = isotropic_moduli(mode, kinematic_youngs, poisson);
    return VonMisesModel(mode, isotropic_moduli(mode, youngs, poisson), sigma_y, std::move(iso),
                         std::move(H));
  }

  DimMode dim_mode() const { return mode_; }
  Index n_sigma() const { return stress_size(mode_); }
  const Mat& elastic() const { return C_; }
  const Mat& elastic_inv() const { return C_inv_; }
  bool has_kinematic() const { return H_.has_value(); }
  const Mat& kinematic() const { return *H_; }
  const Mat& kinematic_inv() const { return *H_inv_; }
  double sigma_y() const { return sigma_y_; }
  const IsotropicHardening& hardening() const { return iso_; }
  const Mat& yield_form() const { return P_; }
  const Mat& diagonalizer() const { return Q_; }
  const Vec& lambda_P() const { return lambda_P_; }
  const Vec& lambda_CHP() const { return lambda_CHP_; }

  /// Strain scale sigma_y / max(C_ii); used for activation thresholds.
  double reference_strain() const { return reference_strain_; }

private:
  void check_orthogonal() const {
    const Mat err = Q_.transpose() * Q_ - Mat::Identity(Q_.rows(), Q_.cols());
    require(err.cwiseAbs().maxCoeff() <= 1e-14, "VonMisesModel: Q is not orthogonal");
  }

  Vec extract_diagonal(const Mat& m, const char* label) const {
    const double scale = std::max(m.cwiseAbs().maxCoeff(), 1e-300);
    Mat off = m;
    off.diagonal().setZero();
    require(off.cwiseAbs().maxCoeff() <= 1e-12 * scale,
            std::string("VonMisesModel: Q does not diagonalize ") + label);
    return m.diagonal();
  }

  DimMode mode_;
  Mat C_;
  std::optional<Mat> H_;
  double sigma_y_;
  IsotropicHardening iso_;
  Mat P_, Q_, C_inv_;
  std::optional<Mat> H_inv_;
  Vec lambda_P_, lambda_CHP_;
  double reference_strain_ = 0.0;
};

/// Per-integration-point state. zeta_kh stays identically zero when the
/// model has no kinematic hardening; zeta_ih and alpha_ih satisfy
/// zeta_ih = hardening.stress(alpha_ih) for states produced by return_map.
struct MaterialState {
  Vec sigma;
  Vec zeta_kh;
  double zeta_ih = 0.0;
  double alpha_ih = 0.0;

  static MaterialState zero(Index n_sigma) {
    return {Vec::Zero(n_sigma), Vec::Zero(n_sigma), 0.0, 0.0};
  }
};

struct TrialState {
  Vec sigma;
  Vec zeta_kh;
  double zeta_ih = 0.0;
};

struct ReturnMapResult {
  MaterialState state;
  double lambda = 0.0;  ///< plastic multiplier (equivalent plastic strain increment scale)
  Mat tangent;          ///< consistent tangent, symmetric
  bool yielded = false;
  bool degenerate = false;  ///< trial exactly on the surface with lambda ~ 0
  double ip_energy = 0.0;   ///< integration-point objective value at the minimizer
};

inline double yield_value(const VonMisesModel& model, const Vec& sigma, const Vec& zeta_kh,
                          double zeta_ih) {
  require(sigma.size() == model.n_sigma() && zeta_kh.size() == model.n_sigma(),
          "yield_value: vector length does not match dim mode");
  const Vec d = sigma - zeta_kh;
  return std::sqrt(d.dot(model.yield_form() * d)) - kSqrt23 * (model.sigma_y() + zeta_ih);
}

inline double yield_value(const VonMisesModel& model, const MaterialState& state) {
  return yield_value(model, state.sigma, state.zeta_kh, state.zeta_ih);
}

/// Complementary stored energy of a state (per unit volume, unweighted).
inline double complementary_energy(const VonMisesModel& model, const MaterialState& state) {
  require(state.sigma.size() == model.n_sigma(), "complementary_energy: state size mismatch");
  double value = 0.5 * state.sigma.dot(model.elastic_inv() * state.sigma);
  if (model.has_kinematic())
    value += 0.5 * state.zeta_kh.dot(model.kinematic_inv() * state.zeta_kh);
  // Legendre transform of the hardening energy evaluated at zeta_ih.
  value += state.zeta_ih * state.alpha_ih - model.hardening().energy(state.alpha_ih);
  return value;
}

/// Elastic predictor: stress advances by C * d_eps, internal variables freeze.
inline TrialState trial_state(const VonMisesModel& model, const MaterialState& prev,
                              const Vec& d_eps) {
  require(d_eps.size() == model.n_sigma(), "trial_state: strain increment size mismatch");
  return {prev.sigma + model.elastic() * d_eps, prev.zeta_kh, prev.zeta_ih};
}

namespace detail {

/// Residual of the scalar consistency equation in the equivalent plastic
/// strain: f(alpha) = sum_r lamP_r (w_r / D_r)^2 - 1 with
/// D_r = sqrt(2/3)(sigma_y + stress(alpha)) + sqrt(3/2)(alpha - alpha_n) lamCHP_r.
struct ConsistencyFn {
  const VonMisesModel& model;
  const Vec& w;  // Q^T (sigma_tr - zeta_kh_tr)
  double alpha_n;

  double value(double alpha) const {
    const double zih = model.hardening().stress(alpha);
    double f = -1.0;
    for (Index r = 0; r < w.size(); ++r) {
      const double lp = model.lambda_P()[r];
      if (lp == 0.0) continue;
      const double d = kSqrt23 * (model.sigma_y() + zih) +
                       kSqrt32 * (alpha - alpha_n) * model.lambda_CHP()[r];
      const double q = w[r] / d;
      f += lp * q * q;
    }
    return f;
  }

  double derivative(double alpha) const {
    const double zih = model.hardening().stress(alpha);
    const double dzih = model.hardening().modulus(alpha);
    double df = 0.0;
    for (Index r = 0; r < w.size(); ++r) {
      const double lp = model.lambda_P()[r];
      if (lp == 0.0) continue;
      const double d = kSqrt23 * (model.sigma_y() + zih) +
                       kSqrt32 * (alpha - alpha_n) * model.lambda_CHP()[r];
      const double dd = kSqrt23 * dzih + kSqrt32 * model.lambda_CHP()[r];
      df -= 2.0 * lp * w[r] * w[r] * dd / (d * d * d);
    }
    return df;
  }
};

/// Newton from alpha_n on the consistency equation, safeguarded by bisection
/// on a bracket grown geometrically until the residual changes sign.
inline double solve_consistency(const ConsistencyFn& fn, double alpha_n, double ref_strain) {
  constexpr double kTol = 1e-13;
  double lo = alpha_n;
  double f_lo = fn.value(lo);
  if (f_lo <= 0.0) return alpha_n;  // caller only enters with a yielding trial

  double step = std::max(ref_strain, 1e-16);
  double hi = alpha_n + step;
  double f_hi = fn.value(hi);
  int grow = 0;
  while (f_hi > 0.0) {
    if (++grow > 200)
      throw NumericalError("return_map: consistency equation has no bracket; model is not convex or corrupt");
    lo = hi;
    f_lo = f_hi;
    step *= 2.0;
    hi = alpha_n + step;
    f_hi = fn.value(hi);
  }

  double x = lo;
  double f = f_lo;
  for (int it = 0; it < 50; ++it) {
    if (std::abs(f) <= kTol) return x;
    const double df = fn.derivative(x);
    double x_next = (df != 0.0) ? x - f / df : lo;
    if (!(x_next > lo && x_next < hi)) x_next = 0.5 * (lo + hi);  // bisect when Newton leaves the bracket
    x = x_next;
    f = fn.value(x);
    if (f > 0.0) {
      lo = x;
    } else {
      hi = x;
    }
  }
  // Bisection fallback.
  while (hi - lo > 4.0 * std::numeric_limits<double>::epsilon() * std::max({std::abs(lo), std::abs(hi), 1e-30})) {
    x = 0.5 * (lo + hi);
    f = fn.value(x);
    if (f > 0.0) lo = x; else hi = x;
  }
  if (std::abs(f) > 1e-8)
    throw NumericalError("return_map: consistency equation did not converge");
  return x;
}

} // namespace detail

/// Consistent tangent at a converged return-map state. The elastic branch
/// (lambda below the activation threshold) returns C; the plastic branch
/// solves the bordered linear system obtained by differentiating the active
/// optimality conditions, with the scalar hardening row eliminated
/// analytically so that a zero hardening modulus needs no inverse.
inline Mat consistent_tangent(const VonMisesModel& model, const MaterialState& state,
                              double lambda) {
  const Index n = model.n_sigma();
  const double eps_act = 1e-12 * model.reference_strain();
  if (lambda <= eps_act) return model.elastic();

  const Vec d = state.sigma - state.zeta_kh;
  const Vec pd = model.yield_form() * d;
  const double rho = std::sqrt(d.dot(pd));
  require(rho > 0.0, "consistent_tangent: vanishing relative stress on the yield surface");
  const Vec nhat = pd / rho;
  // Curvature of the yield function in sigma: (P - nhat nhat^T) / rho.
  const Mat W = (model.yield_form() - nhat * nhat.transpose()) / rho;
  const double hard = model.hardening().modulus(state.alpha_ih);

  const Index nz = model.has_kinematic() ? n : 0;
  const Index size = n + nz + 1;
  Mat M = Mat::Zero(size, size);
  M.topLeftCorner(n, n) = model.elastic_inv() + lambda * W;
  M.block(0, n + nz, n, 1) = nhat;
  M.block(n + nz, 0, 1, n) = nhat.transpose();
  if (model.has_kinematic()) {
    M.block(0, n, n, n) = -lambda * W;
    M.block(n, 0, n, n) = -lambda * W;
    M.block(n, n, n, n) = model.kinematic_inv() + lambda * W;
    M.block(n, n + nz, n, 1) = -nhat;
    M.block(n + nz, n, 1, n) = -nhat.transpose();
  }
  M(n + nz, n + nz) = -(2.0 / 3.0) * hard;

  Mat rhs = Mat::Zero(size, n);
  rhs.topRows(n) = Mat::Identity(n, n);
  Eigen::FullPivLU<Mat> lu(M);
  if (!lu.isInvertible())
    throw NumericalError("consistent_tangent: singular bordered system (degenerate active set)");
  const Mat K = lu.solve(rhs).topRows(n);
  return 0.5 * (K + K.transpose());
}

/// Incremental state update: elastic predictor, then (if the trial state
/// violates the yield condition) the closest-point projection computed from
/// the scalar consistency equation in the diagonalizing coordinates.
inline ReturnMapResult return_map(const VonMisesModel& model, const MaterialState& prev,
                                  const Vec& d_eps) {
  const Index n = model.n_sigma();
  require(prev.sigma.size() == n && prev.zeta_kh.size() == n,
          "return_map: state size does not match model");
  const TrialState tr = trial_state(model, prev, d_eps);
  const double phi_tr = yield_value(model, tr.sigma, tr.zeta_kh, tr.zeta_ih);

  ReturnMapResult res;
  const Vec b_sigma = model.elastic_inv() * prev.sigma;
  const auto energy_at = [&](const MaterialState& s) {
    double e = complementary_energy(model, s) - (d_eps + b_sigma).dot(s.sigma) -
               prev.alpha_ih * s.zeta_ih;
    if (model.has_kinematic())
      e -= (model.kinematic_inv() * prev.zeta_kh).dot(s.zeta_kh);
    return e;
  };

  if (phi_tr <= 0.0) {
    res.state = {tr.sigma, tr.zeta_kh, tr.zeta_ih, prev.alpha_ih};
    res.lambda = 0.0;
    res.tangent = model.elastic();
    res.yielded = false;
    res.ip_energy = energy_at(res.state);
    return res;
  }

  const Vec w = model.diagonalizer().transpose() * (tr.sigma - tr.zeta_kh);
  const detail::ConsistencyFn fn{model, w, prev.alpha_ih};
  const double alpha = detail::solve_consistency(fn, prev.alpha_ih, model.reference_strain());
  const double zeta_ih = model.hardening().stress(alpha);
  const double lambda = kSqrt32 * (alpha - prev.alpha_ih);
  const double c = lambda / (kSqrt23 * (model.sigma_y() + zeta_ih));

  const Vec y = w.array() / (1.0 + c * model.lambda_CHP().array());
  const Vec rel = model.diagonalizer() * y;  // sigma - zeta_kh at the solution
  const Vec p_rel = model.yield_form() * rel;

  res.state.sigma = tr.sigma - c * (model.elastic() * p_rel);
  res.state.zeta_kh = model.has_kinematic() ? Vec(tr.zeta_kh + c * (model.kinematic() * p_rel))
                                            : Vec(Vec::Zero(n));
  res.state.zeta_ih = zeta_ih;
  res.state.alpha_ih = alpha;
  res.lambda = lambda;
  res.yielded = true;
  res.degenerate = lambda <= 1e-12 * model.reference_strain();
  res.tangent = consistent_tangent(model, res.state, lambda);
  res.ip_energy = energy_at(res.state);
  return res;
}

} // namespace redual
