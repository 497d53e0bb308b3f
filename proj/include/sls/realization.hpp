#pragma once
// Step-wise executable controller realizations. Four variants: the standard
// state-feedback and output-feedback forms driven by the full system
// response, and the simplified forms for open-loop stable plants that need
// only one convolution (Phi_u or Phi_uy).

#include <Eigen/Dense>

#include <deque>
#include <memory>
#include <stdexcept>

#include "sls/lti.hpp"
#include "sls/spectral.hpp"
#include "sls/synthesis.hpp"

namespace sls {

class AlgebraicLoopError : public std::runtime_error {
 public:
  explicit AlgebraicLoopError(const std::string& what) : std::runtime_error(what) {}
};

// Fixed-capacity history: back(1) is the most recent pushed value; reads
// beyond the capacity or the recorded past return zero.
class RingHistory {
 public:
  RingHistory() = default;
  RingHistory(int dim, int capacity) : dim_(dim), cap_(capacity) {}

  void push(const VectorXd& v) {
    if (cap_ <= 0) return;
    buf_.push_front(v);
    if (static_cast<int>(buf_.size()) > cap_) buf_.pop_back();
  }

  VectorXd back(int k) const {
    if (k < 1 || k > static_cast<int>(buf_.size())) return VectorXd::Zero(dim_);
    return buf_[static_cast<size_t>(k - 1)];
  }

  void clear() { buf_.clear(); }

 private:
  int dim_ = 0;
  int cap_ = 0;
  std::deque<VectorXd> buf_;
};

// Deterministic measurement -> control map; all state lives in the object.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual VectorXd step(const VectorXd& measurement) = 0;
  virtual void reset() = 0;
  virtual int measurement_dim() const = 0;
  virtual int control_dim() const = 0;
};

// delta[t] = x[t] - xhat[t];  u[t] = sum_{tau>=1} Phi_u[tau] delta[t+1-tau];
// xhat[t+1] = sum_{tau>=2} Phi_x[tau] delta[t+2-tau]. Needs the full FIR pair.
class SfStandardController final : public Controller {
 public:
  explicit SfStandardController(SystemResponseSF resp) : resp_(std::move(resp)) {
    detail::require(resp_.phi_x.start_tau() == 1 && resp_.phi_u.start_tau() == 1,
                    "SfStandardController: responses must be strictly proper");
    detail::require(resp_.phi_x.cols() == resp_.phi_u.cols(),
                    "SfStandardController: response column mismatch");
    nx_ = resp_.phi_x.rows();
    nu_ = resp_.phi_u.rows();
    reset();
  }

  VectorXd step(const VectorXd& x) override {
    detail::require(x.size() == nx_, "SfStandardController: measurement dimension mismatch");
    const VectorXd delta = x - xhat_;
    VectorXd u = VectorXd::Zero(nu_);
    for (int tau = 1; tau <= resp_.phi_u.horizon(); ++tau)
      u += resp_.phi_u.tap(tau) * (tau == 1 ? delta : hist_.back(tau - 1));
    VectorXd xhat_next = VectorXd::Zero(nx_);
    for (int tau = 2; tau <= resp_.phi_x.horizon(); ++tau)
      xhat_next += resp_.phi_x.tap(tau) * (tau == 2 ? delta : hist_.back(tau - 2));
    hist_.push(delta);
    xhat_ = xhat_next;
    return u;
  }

  void reset() override {
    xhat_ = VectorXd::Zero(nx_);
    const int cap = std::max(resp_.phi_u.horizon() - 1, resp_.phi_x.horizon() - 2);
    hist_ = RingHistory(nx_, std::max(cap, 0));
  }

  int measurement_dim() const override { return nx_; }
  int control_dim() const override { return nu_; }
  const VectorXd& state_estimate() const { return xhat_; }

 private:
  SystemResponseSF resp_;
  int nx_ = 0, nu_ = 0;
  VectorXd xhat_;
  RingHistory hist_;
};

// delta[t] = x[t] - A x[t-1] - B u[t-1];  u[t] = sum_{tau>=1} Phi_u[tau]
// delta[t+1-tau]. Only Phi_u is stored, so Phi_x may be IIR. Requires a
// Schur-stable A.
class SfSimplifiedController final : public Controller {
 public:
  SfSimplifiedController(LtiSystem sys, SpectralSeries phi_u)
      : sys_(std::move(sys)), phi_u_(std::move(phi_u)) {
    sys_.validate();
    if (!is_schur_stable(sys_.A).stable)
      throw std::domain_error("SfSimplifiedController: requires a Schur-stable A");
    detail::require(phi_u_.start_tau() == 1, "SfSimplifiedController: Phi_u must be strictly proper");
    detail::require(phi_u_.cols() == sys_.nx() && phi_u_.rows() == sys_.nu(),
                    "SfSimplifiedController: Phi_u must be nu x nx");
    reset();
  }

  VectorXd step(const VectorXd& x) override {
    detail::require(x.size() == sys_.nx(), "SfSimplifiedController: measurement dimension mismatch");
    last_delta_ = x - sys_.A * prev_x_ - sys_.B * prev_u_;
    VectorXd u = VectorXd::Zero(sys_.nu());
    for (int tau = 1; tau <= phi_u_.horizon(); ++tau)
      u += phi_u_.tap(tau) * (tau == 1 ? last_delta_ : hist_.back(tau - 1));
    hist_.push(last_delta_);
    prev_x_ = x;
    prev_u_ = u;
    return u;
  }

  void reset() override {
    prev_x_ = VectorXd::Zero(sys_.nx());
    prev_u_ = VectorXd::Zero(sys_.nu());
    last_delta_ = VectorXd::Zero(sys_.nx());
    hist_ = RingHistory(sys_.nx(), std::max(phi_u_.horizon() - 1, 0));
  }

  int measurement_dim() const override { return sys_.nx(); }
  int control_dim() const override { return sys_.nu(); }
  const VectorXd& last_delta() const { return last_delta_; }

 private:
  LtiSystem sys_;
  SpectralSeries phi_u_;
  VectorXd prev_x_, prev_u_, last_delta_;
  RingHistory hist_;
};

// The standard output-feedback realization:
//   beta[t+1] = -sum_{tau>=2} Phi_xx[tau] beta[t+2-tau]
//               -sum_{tau>=1} Phi_xy[tau] ybar[t+1-tau]
//   u[t]      =  sum_{tau>=1} Phi_ux[tau] beta[t+1-tau]
//               +sum_{tau>=0} Phi_uy[tau] ybar[t-tau]
//   ybar[t]   =  y[t] - D u[t]
// The feedthrough loop is solved each step as (I + Phi_uy[0] D) u = Phi_uy[0]
// y + u'; the solve matrix is factored once at construction.
class OfStandardController final : public Controller {
 public:
  OfStandardController(SystemResponseOF resp, MatrixXd D) : resp_(std::move(resp)), D_(std::move(D)) {
    nx_ = resp_.phi_xx.rows();
    ny_ = resp_.phi_uy.cols();
    nu_ = resp_.phi_uy.rows();
    detail::require(resp_.phi_uy.start_tau() == 0, "OfStandardController: Phi_uy must start at tau = 0");
    detail::require(D_.rows() == ny_ && D_.cols() == nu_, "OfStandardController: D must be ny x nu");
    const MatrixXd S = MatrixXd::Identity(nu_, nu_) + resp_.phi_uy.at(0) * D_;
    Eigen::FullPivLU<MatrixXd> lu(S);
    if (!lu.isInvertible())
      throw AlgebraicLoopError("OfStandardController: I + Phi_uy[0] D is singular");
    loop_inverse_ = lu.inverse();
    reset();
  }

  VectorXd step(const VectorXd& y) override {
    detail::require(y.size() == ny_, "OfStandardController: measurement dimension mismatch");
    VectorXd uprime = VectorXd::Zero(nu_);
    for (int tau = 1; tau <= resp_.phi_ux.horizon(); ++tau)
      uprime += resp_.phi_ux.tap(tau) * (tau == 1 ? beta_ : beta_hist_.back(tau - 1));
    for (int tau = 1; tau <= resp_.phi_uy.horizon(); ++tau)
      uprime += resp_.phi_uy.tap(tau) * ybar_hist_.back(tau);
    const VectorXd u = loop_inverse_ * (resp_.phi_uy.at(0) * y + uprime);
    const VectorXd ybar = y - D_ * u;
    VectorXd beta_next = VectorXd::Zero(nx_);
    for (int tau = 2; tau <= resp_.phi_xx.horizon(); ++tau)
      beta_next -= resp_.phi_xx.tap(tau) * (tau == 2 ? beta_ : beta_hist_.back(tau - 2));
    for (int tau = 1; tau <= resp_.phi_xy.horizon(); ++tau)
      beta_next -= resp_.phi_xy.tap(tau) * (tau == 1 ? ybar : ybar_hist_.back(tau - 1));
    beta_hist_.push(beta_);
    beta_ = beta_next;
    ybar_hist_.push(ybar);
    return u;
  }

  void reset() override {
    beta_ = VectorXd::Zero(nx_);
    beta_hist_ = RingHistory(nx_, std::max({resp_.phi_ux.horizon() - 1, resp_.phi_xx.horizon() - 2, 0}));
    ybar_hist_ = RingHistory(ny_, std::max({resp_.phi_uy.horizon(), resp_.phi_xy.horizon() - 1, 0}));
  }

  int measurement_dim() const override { return ny_; }
  int control_dim() const override { return nu_; }

 private:
  SystemResponseOF resp_;
  MatrixXd D_;
  MatrixXd loop_inverse_;
  int nx_ = 0, ny_ = 0, nu_ = 0;
  VectorXd beta_;
  RingHistory beta_hist_, ybar_hist_;
};

// The simplified output-feedback realization for stable plants:
//   xhat[t+1] = A xhat[t] + B u[t]
//   delta[t]  = y[t] - C xhat[t] - D u[t]
//   u[t]      = sum_{tau>=0} Phi_uy[tau] delta[t-tau]
// With D != 0 the step contains an algebraic loop through Phi_uy[0] D, solved
// by the same prefactored (I + Phi_uy[0] D) system.
class OfSimplifiedController final : public Controller {
 public:
  OfSimplifiedController(LtiSystem sys, SpectralSeries phi_uy)
      : sys_(std::move(sys)), phi_uy_(std::move(phi_uy)) {
    sys_.validate();
    if (!is_schur_stable(sys_.A).stable)
      throw std::domain_error("OfSimplifiedController: requires a Schur-stable A");
    detail::require(phi_uy_.start_tau() == 0, "OfSimplifiedController: Phi_uy must start at tau = 0");
    detail::require(phi_uy_.rows() == sys_.nu() && phi_uy_.cols() == sys_.ny(),
                    "OfSimplifiedController: Phi_uy must be nu x ny");
    const MatrixXd S = MatrixXd::Identity(sys_.nu(), sys_.nu()) + phi_uy_.at(0) * sys_.D;
    Eigen::FullPivLU<MatrixXd> lu(S);
    if (!lu.isInvertible())
      throw AlgebraicLoopError("OfSimplifiedController: I + Phi_uy[0] D is singular");
    loop_inverse_ = lu.inverse();
    reset();
  }

  VectorXd step(const VectorXd& y) override { return step_perturbed(y, VectorXd::Zero(sys_.nx())); }

  // Step with an additive perturbation on the internal state update, for
  // internal-stability probing. The returned u is the controller's own
  // output; actuator-side disturbances are added by the caller and do not
  // enter the xhat recursion.
  VectorXd step_perturbed(const VectorXd& y, const VectorXd& d_xhat) {
    detail::require(y.size() == sys_.ny(), "OfSimplifiedController: measurement dimension mismatch");
    detail::require(d_xhat.size() == sys_.nx(), "OfSimplifiedController: perturbation dimension mismatch");
    const VectorXd w = y - sys_.C * xhat_;
    VectorXd past = VectorXd::Zero(sys_.nu());
    for (int tau = 1; tau <= phi_uy_.horizon(); ++tau) past += phi_uy_.tap(tau) * hist_.back(tau);
    const VectorXd u = loop_inverse_ * (phi_uy_.at(0) * w + past);
    const VectorXd delta = w - sys_.D * u;
    hist_.push(delta);
    xhat_ = sys_.A * xhat_ + sys_.B * u + d_xhat;
    return u;
  }

  void reset() override {
    xhat_ = VectorXd::Zero(sys_.nx());
    hist_ = RingHistory(sys_.ny(), std::max(phi_uy_.horizon(), 0));
  }

  int measurement_dim() const override { return sys_.ny(); }
  int control_dim() const override { return sys_.nu(); }
  const VectorXd& state_estimate() const { return xhat_; }
  VectorXd last_delta() const { return hist_.back(1); }
  const SpectralSeries& phi_uy() const { return phi_uy_; }
  const LtiSystem& plant_model() const { return sys_; }

 private:
  LtiSystem sys_;
  SpectralSeries phi_uy_;
  MatrixXd loop_inverse_;
  VectorXd xhat_;
  RingHistory hist_;
};

struct RobustMargin {
  double margin = 0.0;
  bool certified = false;  // margin < 1
};

// Induced-linf norm of { A_u Phi_x[tau] }: below one, the controller designed
// for the stable part A_s also stabilizes A_s + A_u.
inline RobustMargin robust_margin(const MatrixXd& A_s, const MatrixXd& A_u, const SpectralSeries& phi_x) {
  detail::require(A_s.rows() == A_u.rows() && A_s.cols() == A_u.cols(),
                  "robust_margin: decomposition shape mismatch");
  detail::require(A_u.cols() == phi_x.rows(), "robust_margin: Phi_x row count mismatch");
  std::vector<MatrixXd> taps;
  for (int tau = phi_x.start_tau(); tau <= phi_x.horizon(); ++tau) taps.push_back(A_u * phi_x.tap(tau));
  const double margin = induced_linf_norm(SpectralSeries(phi_x.start_tau(), std::move(taps)));
  return {margin, margin < 1.0};
}

}  // namespace sls
