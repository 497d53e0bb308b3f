#pragma once
// Finite spectral series: Phi = sum_{tau=start}^{horizon} z^-tau Phi[tau].
// The universal currency for synthesized responses and convolution-based
// controller stepping. Element access outside the stored range reads zero.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sls/lti.hpp"
#include "sls/trace.hpp"

namespace sls {

class SpectralSeries {
 public:
  SpectralSeries() = default;

  SpectralSeries(int start_tau, std::vector<MatrixXd> elements)
      : start_tau_(start_tau), elems_(std::move(elements)) {
    detail::require(start_tau_ >= 0, "SpectralSeries: start_tau must be >= 0");
    detail::require(!elems_.empty(), "SpectralSeries: needs at least one element");
    rows_ = static_cast<int>(elems_.front().rows());
    cols_ = static_cast<int>(elems_.front().cols());
    for (const auto& e : elems_)
      detail::require(e.rows() == rows_ && e.cols() == cols_, "SpectralSeries: ragged element shapes");
  }

  static SpectralSeries zeros(int start_tau, int count, int rows, int cols) {
    return SpectralSeries(start_tau, std::vector<MatrixXd>(count, MatrixXd::Zero(rows, cols)));
  }

  int start_tau() const { return start_tau_; }
  int horizon() const { return start_tau_ + static_cast<int>(elems_.size()) - 1; }
  int count() const { return static_cast<int>(elems_.size()); }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool empty() const { return elems_.empty(); }

  // Zero outside [start_tau, horizon].
  MatrixXd at(int tau) const {
    if (tau < start_tau_ || tau > horizon()) return MatrixXd::Zero(rows_, cols_);
    return elems_[static_cast<size_t>(tau - start_tau_)];
  }

  // In-range access without the copy; callers own the bound check.
  const MatrixXd& tap(int tau) const { return elems_[static_cast<size_t>(tau - start_tau_)]; }

  void set(int tau, MatrixXd value) {
    detail::require(tau >= start_tau_ && tau <= horizon(), "SpectralSeries::set: tau out of range");
    detail::require(value.rows() == rows_ && value.cols() == cols_, "SpectralSeries::set: shape mismatch");
    elems_[static_cast<size_t>(tau - start_tau_)] = std::move(value);
  }

  Eigen::MatrixXcd eval(std::complex<double> z) const {
    Eigen::MatrixXcd acc = Eigen::MatrixXcd::Zero(rows_, cols_);
    for (int tau = start_tau_; tau <= horizon(); ++tau)
      acc += std::pow(z, -tau) * tap(tau);
    return acc;
  }

  SpectralSeries truncated(int new_horizon) const {
    detail::require(new_horizon >= start_tau_, "SpectralSeries::truncated: horizon below start");
    std::vector<MatrixXd> kept;
    for (int tau = start_tau_; tau <= std::min(new_horizon, horizon()); ++tau) kept.push_back(tap(tau));
    while (static_cast<int>(kept.size()) < new_horizon - start_tau_ + 1)
      kept.push_back(MatrixXd::Zero(rows_, cols_));
    return SpectralSeries(start_tau_, std::move(kept));
  }

  double max_abs() const {
    double m = 0.0;
    for (const auto& e : elems_) m = std::max(m, e.cwiseAbs().maxCoeff());
    return m;
  }

 private:
  int start_tau_ = 0;
  std::vector<MatrixXd> elems_;
  int rows_ = 0;
  int cols_ = 0;
};

inline SpectralSeries operator+(const SpectralSeries& a, const SpectralSeries& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "SpectralSeries: shape mismatch in +");
  const int start = std::min(a.start_tau(), b.start_tau());
  const int stop = std::max(a.horizon(), b.horizon());
  std::vector<MatrixXd> elems;
  for (int tau = start; tau <= stop; ++tau) elems.push_back(a.at(tau) + b.at(tau));
  return SpectralSeries(start, std::move(elems));
}

inline SpectralSeries operator-(const SpectralSeries& a, const SpectralSeries& b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "SpectralSeries: shape mismatch in -");
  const int start = std::min(a.start_tau(), b.start_tau());
  const int stop = std::max(a.horizon(), b.horizon());
  std::vector<MatrixXd> elems;
  for (int tau = start; tau <= stop; ++tau) elems.push_back(a.at(tau) - b.at(tau));
  return SpectralSeries(start, std::move(elems));
}

// Series product truncated at max_horizon: C[tau] = sum_{a+b=tau} A[a] B[b].
inline SpectralSeries convolve(const SpectralSeries& a, const SpectralSeries& b, int max_horizon) {
  detail::require(a.cols() == b.rows(), "convolve: inner dimensions mismatch");
  const int start = a.start_tau() + b.start_tau();
  detail::require(max_horizon >= start, "convolve: horizon below start of product");
  SpectralSeries out = SpectralSeries::zeros(start, max_horizon - start + 1, a.rows(), b.cols());
  for (int ta = a.start_tau(); ta <= a.horizon(); ++ta) {
    for (int tb = b.start_tau(); tb <= b.horizon(); ++tb) {
      const int tau = ta + tb;
      if (tau > max_horizon) break;
      out.set(tau, out.tap(tau) + a.tap(ta) * b.tap(tb));
    }
  }
  return out;
}

// Left/right products with a constant matrix.
inline SpectralSeries left_multiply(const MatrixXd& M, const SpectralSeries& s) {
  std::vector<MatrixXd> elems;
  for (int tau = s.start_tau(); tau <= s.horizon(); ++tau) elems.push_back(M * s.tap(tau));
  return SpectralSeries(s.start_tau(), std::move(elems));
}

inline SpectralSeries right_multiply(const SpectralSeries& s, const MatrixXd& M) {
  std::vector<MatrixXd> elems;
  for (int tau = s.start_tau(); tau <= s.horizon(); ++tau) elems.push_back(s.tap(tau) * M);
  return SpectralSeries(s.start_tau(), std::move(elems));
}

// Induced linf -> linf norm of the FIR convolution operator:
// max over rows of the total absolute tap mass in that row.
inline double induced_linf_norm(const SpectralSeries& s) {
  Eigen::VectorXd row_mass = Eigen::VectorXd::Zero(s.rows());
  for (int tau = s.start_tau(); tau <= s.horizon(); ++tau)
    row_mass += s.tap(tau).cwiseAbs().rowwise().sum();
  return s.rows() == 0 ? 0.0 : row_mass.maxCoeff();
}

// sum_tau Phi[tau] * w[t + start_offset - tau]; out-of-range history reads zero.
// start_offset 1 matches u[t] = sum_{tau>=1} Phi_u[tau] delta[t+1-tau];
// start_offset 0 matches u[t] = sum_{tau>=0} Phi_uy[tau] delta[t-tau].
inline VectorXd convolve_at(const SpectralSeries& s, const Signal& history, long t, int start_offset) {
  detail::require(history.dim() == s.cols(), "convolve_at: history dimension mismatch");
  VectorXd acc = VectorXd::Zero(s.rows());
  for (int tau = s.start_tau(); tau <= s.horizon(); ++tau)
    acc += s.tap(tau) * history.at(t + start_offset - tau);
  return acc;
}

struct TruncatedResolvent {
  SpectralSeries series;   // taps A^(tau-1), tau = 1..T
  double tail_norm = 0.0;  // induced-linf norm of A^T
  bool decaying = false;   // tail_norm < 1
};

// Truncation of (zI - A)^{-1} = sum_{tau>=1} z^-tau A^(tau-1).
inline TruncatedResolvent truncated_resolvent(const MatrixXd& A, int T) {
  detail::require(A.rows() == A.cols(), "truncated_resolvent: A must be square");
  detail::require(T >= 1, "truncated_resolvent: T must be >= 1");
  const int n = static_cast<int>(A.rows());
  std::vector<MatrixXd> elems;
  MatrixXd power = MatrixXd::Identity(n, n);
  for (int tau = 1; tau <= T; ++tau) {
    elems.push_back(power);
    power = (A * power).eval();
  }
  const double tail = power.cwiseAbs().rowwise().sum().maxCoeff();
  return {SpectralSeries(1, std::move(elems)), tail, tail < 1.0};
}

}  // namespace sls
