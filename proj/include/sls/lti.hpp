#pragma once
// Discrete-time LTI plant model x[t+1] = A x + B u + d_x, y = C x + D u + d_y,
// plus Schur stability tests.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace sls {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

}  // namespace detail

struct LtiSystem {
  MatrixXd A;  // nx x nx
  MatrixXd B;  // nx x nu
  MatrixXd C;  // ny x nx
  MatrixXd D;  // ny x nu

  int nx() const { return static_cast<int>(A.rows()); }
  int nu() const { return static_cast<int>(B.cols()); }
  int ny() const { return static_cast<int>(C.rows()); }

  // True when the measurement channel is the raw state (C = I, D = 0).
  bool is_state_feedback() const {
    return ny() == nx() && C.isIdentity(0.0) && D.isZero(0.0);
  }

  void validate() const {
    detail::require(A.rows() > 0 && A.rows() == A.cols(), "LtiSystem: A must be square and nonempty");
    detail::require(B.rows() == A.rows() && B.cols() > 0, "LtiSystem: B row count must equal state dimension");
    detail::require(C.cols() == A.rows() && C.rows() > 0, "LtiSystem: C column count must equal state dimension");
    detail::require(D.rows() == C.rows() && D.cols() == B.cols(), "LtiSystem: D must be ny x nu");
  }

  static LtiSystem state_feedback_plant(MatrixXd A, MatrixXd B) {
    const auto n = A.rows();
    LtiSystem sys{std::move(A), std::move(B),
                  MatrixXd::Identity(n, n), MatrixXd::Zero(n, 0)};
    sys.D = MatrixXd::Zero(n, sys.B.cols());
    sys.validate();
    return sys;
  }

  static LtiSystem output_feedback_plant(MatrixXd A, MatrixXd B, MatrixXd C, MatrixXd D) {
    LtiSystem sys{std::move(A), std::move(B), std::move(C), std::move(D)};
    sys.validate();
    return sys;
  }
};

inline VectorXd plant_step(const LtiSystem& sys, const VectorXd& x,
                           const VectorXd& u, const VectorXd& d_x) {
  detail::require(x.size() == sys.nx(), "plant_step: state dimension mismatch");
  detail::require(u.size() == sys.nu(), "plant_step: input dimension mismatch");
  detail::require(d_x.size() == sys.nx(), "plant_step: disturbance dimension mismatch");
  return sys.A * x + sys.B * u + d_x;
}

inline VectorXd plant_output(const LtiSystem& sys, const VectorXd& x,
                             const VectorXd& u, const VectorXd& d_y) {
  detail::require(x.size() == sys.nx(), "plant_output: state dimension mismatch");
  detail::require(u.size() == sys.nu(), "plant_output: input dimension mismatch");
  detail::require(d_y.size() == sys.ny(), "plant_output: disturbance dimension mismatch");
  return sys.C * x + sys.D * u + d_y;
}

namespace detail {

// Scale-tracked repeated squaring: rho(A) = lim_k ||A^k||^(1/k). Robust to
// complex dominant pairs, which plain vector iteration handles poorly.
inline double spectral_radius_power(const MatrixXd& A, double tol) {
  const int max_doublings = 64;
  MatrixXd M = A;
  double log_scale = 0.0;
  double k = 1.0;
  double rho_prev = -1.0;
  for (int j = 0; j < max_doublings; ++j) {
    const double f = M.norm();
    if (f == 0.0) return 0.0;
    if (!std::isfinite(f)) break;
    log_scale += std::log(f);
    const double rho = std::exp(log_scale / k);
    if (rho_prev >= 0.0 && std::abs(rho - rho_prev) <= tol * std::max(1.0, rho)) return rho;
    rho_prev = rho;
    M /= f;
    M = (M * M).eval();
    log_scale *= 2.0;
    k *= 2.0;
  }
  return rho_prev;
}

}  // namespace detail

inline double spectral_radius(const MatrixXd& A) {
  detail::require(A.rows() == A.cols(), "spectral_radius: matrix must be square");
  if (A.rows() == 0) return 0.0;
  if (A.rows() <= 64) {
    Eigen::EigenSolver<MatrixXd> es(A, /*computeEigenvectors=*/false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
  }
  return detail::spectral_radius_power(A, 1e-12);
}

struct StabilityReport {
  bool stable = false;
  double rho = 0.0;
};

// Strict test: stable iff rho(A) < 1 - tol.
inline StabilityReport is_schur_stable(const MatrixXd& A, double tol = 0.0) {
  const double rho = spectral_radius(A);
  return {rho < 1.0 - tol, rho};
}

}  // namespace sls
