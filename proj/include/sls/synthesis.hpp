#pragma once
// FIR system-level synthesis programs: state-feedback H2, the output-feedback
// quadruple program, and the Youla-style route for open-loop stable plants.
// All programs are linearly-constrained quadratics solved through dense KKT
// systems; no external convex solver.

#include <Eigen/Dense>

#include <complex>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sls/eqls.hpp"
#include "sls/lti.hpp"
#include "sls/spectral.hpp"

namespace sls {

using MaskMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Per-tap boolean masks for one decision transfer matrix. A single stored
// mask applies to every tap; otherwise masks are indexed from start_tau.
struct MaskSeries {
  int start_tau = 1;
  std::vector<MaskMatrix> masks;

  bool empty() const { return masks.empty(); }

  const MaskMatrix& at(int tau) const {
    if (masks.size() == 1) return masks.front();
    const int idx = tau - start_tau;
    detail::require(idx >= 0 && idx < static_cast<int>(masks.size()),
                    "MaskSeries: no mask stored for tau " + std::to_string(tau));
    return masks[static_cast<size_t>(idx)];
  }

  bool allows(int tau, int r, int c) const { return empty() || at(tau)(r, c); }
};

struct SparsityPattern {
  std::optional<MaskSeries> phi_x, phi_u;                  // state feedback
  std::optional<MaskSeries> phi_xx, phi_xy, phi_ux, phi_uy;  // output feedback
  std::optional<int> bandwidth;

  static MaskMatrix band(int rows, int cols, int d) {
    MaskMatrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = std::abs(i - j) <= d;
    return m;
  }

  // Bandwidth-d masks on both state-feedback decision matrices, constant in tau.
  static SparsityPattern banded_sf(int nx, int nu, int d) {
    SparsityPattern p;
    p.bandwidth = d;
    p.phi_x = MaskSeries{1, {band(nx, nx, d)}};
    p.phi_u = MaskSeries{1, {band(nu, nx, d)}};
    return p;
  }
};

struct SynthesisSpec {
  int horizon = 1;
  MatrixXd q_sqrt;  // state weight factor, objective uses ||q_sqrt * Phi||_F^2
  MatrixXd r_sqrt;  // input weight factor
  enum class Terminal { hard, soft };
  Terminal terminal = Terminal::hard;
  double soft_penalty = 1.0;
  std::optional<SparsityPattern> pattern;
  // Channel weights for the output-feedback quadruple objective.
  double w_xx = 1.0, w_xy = 1.0, w_ux = 1.0, w_uy = 1.0;

  static SynthesisSpec h2(int T, int nx, int nu) {
    SynthesisSpec s;
    s.horizon = T;
    s.q_sqrt = MatrixXd::Identity(nx, nx);
    s.r_sqrt = MatrixXd::Identity(nu, nu);
    return s;
  }

  void validate(int nx, int nu) const {
    detail::require(horizon >= 1, "SynthesisSpec: horizon must be >= 1");
    detail::require(q_sqrt.cols() == nx, "SynthesisSpec: q_sqrt must have nx columns");
    detail::require(r_sqrt.cols() == nu, "SynthesisSpec: r_sqrt must have nu columns");
    if (terminal == Terminal::soft)
      detail::require(soft_penalty > 0.0, "SynthesisSpec: soft terminal needs positive penalty");
  }
};

struct SystemResponseSF {
  SpectralSeries phi_x;  // nx x nx, tau = 1..T
  SpectralSeries phi_u;  // nu x nx, tau = 1..T
};

struct SystemResponseOF {
  SpectralSeries phi_xx;  // nx x nx, tau >= 1
  SpectralSeries phi_xy;  // nx x ny, tau >= 1
  SpectralSeries phi_ux;  // nu x nx, tau >= 1
  SpectralSeries phi_uy;  // nu x ny, tau >= 0
  bool truncated = false;
  double tail_norm = 0.0;  // meaningful when truncated
};

class InfeasibleSynthesis : public std::runtime_error {
 public:
  InfeasibleSynthesis(std::string constraint, double residual)
      : std::runtime_error("infeasible synthesis: " + constraint +
                           " (residual " + std::to_string(residual) + ")"),
        constraint_(std::move(constraint)),
        residual_(residual) {}

  const std::string& constraint() const { return constraint_; }
  double residual() const { return residual_; }

 private:
  std::string constraint_;
  double residual_;
};

namespace detail {

constexpr double kFeasTol = 1e-8;

// Dense constraint assembly with row labels so infeasibility reports can name
// the violated constraint family.
struct ConstraintBuilder {
  explicit ConstraintBuilder(int free_count) : free_count_(free_count) {}

  void begin_row(std::string label, double rhs) {
    rows_.emplace_back();
    labels_.push_back(std::move(label));
    rhs_.push_back(rhs);
  }

  // free_idx < 0 means the variable is masked to zero and drops out.
  void add(int free_idx, double coeff) {
    if (free_idx >= 0 && coeff != 0.0) rows_.back().emplace_back(free_idx, coeff);
  }

  // Rows with no surviving variables are either trivially satisfied or
  // structurally infeasible.
  void finalize() {
    for (size_t r = 0; r < rows_.size(); ++r)
      if (rows_[r].empty() && std::abs(rhs_[r]) > 0.0)
        throw InfeasibleSynthesis(labels_[r] + " [pattern excludes every variable]", std::abs(rhs_[r]));
    kept_.clear();
    for (size_t r = 0; r < rows_.size(); ++r)
      if (!rows_[r].empty()) kept_.push_back(static_cast<int>(r));
  }

  MatrixXd matrix() const {
    MatrixXd E = MatrixXd::Zero(static_cast<long>(kept_.size()), free_count_);
    for (size_t k = 0; k < kept_.size(); ++k)
      for (const auto& [idx, coeff] : rows_[static_cast<size_t>(kept_[k])]) E(static_cast<long>(k), idx) += coeff;
    return E;
  }

  VectorXd rhs() const {
    VectorXd d(static_cast<long>(kept_.size()));
    for (size_t k = 0; k < kept_.size(); ++k) d(static_cast<long>(k)) = rhs_[static_cast<size_t>(kept_[k])];
    return d;
  }

  const std::string& label_of(long kept_row) const { return labels_[static_cast<size_t>(kept_[static_cast<size_t>(kept_row)])]; }

 private:
  int free_count_;
  std::vector<std::vector<std::pair<int, double>>> rows_;
  std::vector<std::string> labels_;
  std::vector<double> rhs_;
  std::vector<int> kept_;
};

inline void throw_if_violated(const ConstraintBuilder& cb, const EqlsResult& sol,
                              const MatrixXd& E, const VectorXd& d) {
  if (sol.constraint_residual <= kFeasTol) return;
  const VectorXd r = (E * sol.v - d).cwiseAbs();
  long worst = 0;
  r.maxCoeff(&worst);
  throw InfeasibleSynthesis(cb.label_of(worst), sol.constraint_residual);
}

}  // namespace detail

struct SfSynthesisResult {
  SystemResponseSF response;
  double objective = 0.0;
  double terminal_residual = 0.0;
  double kkt_gradient_norm = 0.0;
};

// Column-by-column equality-constrained least squares for the state-feedback
// H2 program: Phi_x[1] = I, the one-step recursion, the FIR terminal
// condition (hard or soft), and optional sparsity masks.
inline SfSynthesisResult synth_sf_h2(const LtiSystem& sys, const SynthesisSpec& spec) {
  sys.validate();
  detail::require(sys.is_state_feedback(), "synth_sf_h2: plant must be state feedback (C = I, D = 0)");
  spec.validate(sys.nx(), sys.nu());

  const int nx = sys.nx(), nu = sys.nu(), T = spec.horizon;
  const MatrixXd Q = spec.q_sqrt.transpose() * spec.q_sqrt;
  const MatrixXd R = spec.r_sqrt.transpose() * spec.r_sqrt;
  const bool soft = spec.terminal == SynthesisSpec::Terminal::soft;

  const MaskSeries* mask_x = nullptr;
  const MaskSeries* mask_u = nullptr;
  if (spec.pattern) {
    if (spec.pattern->phi_x && !spec.pattern->phi_x->empty()) mask_x = &*spec.pattern->phi_x;
    if (spec.pattern->phi_u && !spec.pattern->phi_u->empty()) mask_u = &*spec.pattern->phi_u;
  }
  for (int j = 0; j < nx; ++j)
    if (mask_x && !mask_x->allows(1, j, j))
      throw InfeasibleSynthesis("first-tap identity: pattern excludes diagonal entry (" +
                                    std::to_string(j) + "," + std::to_string(j) + ")",
                                1.0);

  SpectralSeries phi_x = SpectralSeries::zeros(1, T, nx, nx);
  SpectralSeries phi_u = SpectralSeries::zeros(1, T, nu, nx);
  double kkt_grad = 0.0;

  const int per_tap = nx + nu;
  for (int j = 0; j < nx; ++j) {
    // Variable layout per column: tau-major, x block then u block.
    auto var_x = [&](int tau, int i) { return (tau - 1) * per_tap + i; };
    auto var_u = [&](int tau, int k) { return (tau - 1) * per_tap + nx + k; };

    std::vector<int> free_idx(static_cast<size_t>(T * per_tap), -1);
    int free_count = 0;
    for (int tau = 1; tau <= T; ++tau) {
      for (int i = 0; i < nx; ++i)
        if (!mask_x || mask_x->allows(tau, i, j)) free_idx[static_cast<size_t>(var_x(tau, i))] = free_count++;
      for (int k = 0; k < nu; ++k)
        if (!mask_u || mask_u->allows(tau, k, j)) free_idx[static_cast<size_t>(var_u(tau, k))] = free_count++;
    }

    MatrixXd H = MatrixXd::Zero(free_count, free_count);
    auto add_block = [&](const MatrixXd& W, int tau, bool is_x) {
      const int dim = is_x ? nx : nu;
      for (int a = 0; a < dim; ++a) {
        const int fa = free_idx[static_cast<size_t>(is_x ? var_x(tau, a) : var_u(tau, a))];
        if (fa < 0) continue;
        for (int b = 0; b < dim; ++b) {
          const int fb = free_idx[static_cast<size_t>(is_x ? var_x(tau, b) : var_u(tau, b))];
          if (fb >= 0) H(fa, fb) += W(a, b);
        }
      }
    };
    for (int tau = 1; tau <= T; ++tau) {
      add_block(Q, tau, true);
      add_block(R, tau, false);
    }
    if (soft) {
      // lambda * || A phi_x[T] + B phi_u[T] ||^2 expands into cross blocks.
      const double lam = spec.soft_penalty;
      MatrixXd AtA = lam * sys.A.transpose() * sys.A;
      MatrixXd AtB = lam * sys.A.transpose() * sys.B;
      MatrixXd BtB = lam * sys.B.transpose() * sys.B;
      for (int a = 0; a < nx; ++a) {
        const int fa = free_idx[static_cast<size_t>(var_x(T, a))];
        if (fa < 0) continue;
        for (int b = 0; b < nx; ++b) {
          const int fb = free_idx[static_cast<size_t>(var_x(T, b))];
          if (fb >= 0) H(fa, fb) += AtA(a, b);
        }
        for (int k = 0; k < nu; ++k) {
          const int fk = free_idx[static_cast<size_t>(var_u(T, k))];
          if (fk >= 0) {
            H(fa, fk) += AtB(a, k);
            H(fk, fa) += AtB(a, k);
          }
        }
      }
      for (int a = 0; a < nu; ++a) {
        const int fa = free_idx[static_cast<size_t>(var_u(T, a))];
        if (fa < 0) continue;
        for (int b = 0; b < nu; ++b) {
          const int fb = free_idx[static_cast<size_t>(var_u(T, b))];
          if (fb >= 0) H(fa, fb) += BtB(a, b);
        }
      }
    }

    detail::ConstraintBuilder cb(free_count);
    for (int i = 0; i < nx; ++i) {
      cb.begin_row("first-tap identity, row " + std::to_string(i), i == j ? 1.0 : 0.0);
      cb.add(free_idx[static_cast<size_t>(var_x(1, i))], 1.0);
    }
    for (int tau = 1; tau < T; ++tau) {
      for (int i = 0; i < nx; ++i) {
        cb.begin_row("step recursion at tau=" + std::to_string(tau) + ", row " + std::to_string(i), 0.0);
        cb.add(free_idx[static_cast<size_t>(var_x(tau + 1, i))], 1.0);
        for (int l = 0; l < nx; ++l) cb.add(free_idx[static_cast<size_t>(var_x(tau, l))], -sys.A(i, l));
        for (int k = 0; k < nu; ++k) cb.add(free_idx[static_cast<size_t>(var_u(tau, k))], -sys.B(i, k));
      }
    }
    if (!soft) {
      for (int i = 0; i < nx; ++i) {
        cb.begin_row("terminal condition, row " + std::to_string(i), 0.0);
        for (int l = 0; l < nx; ++l) cb.add(free_idx[static_cast<size_t>(var_x(T, l))], sys.A(i, l));
        for (int k = 0; k < nu; ++k) cb.add(free_idx[static_cast<size_t>(var_u(T, k))], sys.B(i, k));
      }
    }
    cb.finalize();

    const MatrixXd E = cb.matrix();
    const VectorXd d = cb.rhs();
    const auto sol = solve_equality_ls(H, VectorXd::Zero(free_count), E, d);
    detail::throw_if_violated(cb, sol, E, d);
    kkt_grad = std::max(kkt_grad, sol.kkt_gradient_norm);

    for (int tau = 1; tau <= T; ++tau) {
      MatrixXd mx = phi_x.at(tau);
      MatrixXd mu_ = phi_u.at(tau);
      for (int i = 0; i < nx; ++i) {
        const int f = free_idx[static_cast<size_t>(var_x(tau, i))];
        mx(i, j) = f >= 0 ? sol.v(f) : 0.0;
      }
      for (int k = 0; k < nu; ++k) {
        const int f = free_idx[static_cast<size_t>(var_u(tau, k))];
        mu_(k, j) = f >= 0 ? sol.v(f) : 0.0;
      }
      phi_x.set(tau, std::move(mx));
      phi_u.set(tau, std::move(mu_));
    }
  }

  SfSynthesisResult out;
  out.response = {phi_x, phi_u};
  for (int tau = 1; tau <= T; ++tau)
    out.objective += (spec.q_sqrt * phi_x.tap(tau)).squaredNorm() + (spec.r_sqrt * phi_u.tap(tau)).squaredNorm();
  out.terminal_residual = (sys.A * phi_x.tap(T) + sys.B * phi_u.tap(T)).cwiseAbs().maxCoeff();
  out.kkt_gradient_norm = kkt_grad;
  return out;
}

struct SfResidualReport {
  double first_tap = 0.0;   // max |Phi_x[1] - I|
  double recursion = 0.0;   // max over tau of |Phi_x[tau+1] - A Phi_x[tau] - B Phi_u[tau]|
  double terminal = 0.0;    // max |A Phi_x[T] + B Phi_u[T]|
  double worst() const { return std::max(first_tap, std::max(recursion, terminal)); }
  bool within(double tol) const { return worst() <= tol; }
};

inline SfResidualReport validate_sf_achievability(const SystemResponseSF& resp,
                                                  const LtiSystem& sys, double /*tol*/ = 0.0) {
  const int T = resp.phi_x.horizon();
  detail::require(resp.phi_u.horizon() == T && resp.phi_x.start_tau() == 1 && resp.phi_u.start_tau() == 1,
                  "validate_sf_achievability: response taps must cover tau = 1..T");
  SfResidualReport rep;
  rep.first_tap = (resp.phi_x.at(1) - MatrixXd::Identity(sys.nx(), sys.nx())).cwiseAbs().maxCoeff();
  for (int tau = 1; tau < T; ++tau) {
    const MatrixXd r = resp.phi_x.at(tau + 1) - sys.A * resp.phi_x.at(tau) - sys.B * resp.phi_u.at(tau);
    rep.recursion = std::max(rep.recursion, r.cwiseAbs().maxCoeff());
  }
  rep.terminal = (sys.A * resp.phi_x.at(T) + sys.B * resp.phi_u.at(T)).cwiseAbs().maxCoeff();
  return rep;
}

struct OfSynthesisResult {
  SystemResponseOF response;
  double objective = 0.0;
  double kkt_gradient_norm = 0.0;
};

namespace detail {

// Variable layout of the stacked quadruple program: tau-major, then matrix in
// the order (xx, xy, ux, uy), then column-major entries. tau = 0 holds only
// the uy tap; strict properness of the other members is structural.
struct QuadrupleLayout {
  int nx, ny, nu, T;

  int per_tap() const { return nx * nx + nx * ny + nu * nx + nu * ny; }
  int tap_offset(int tau) const {
    return tau == 0 ? 0 : nu * ny + (tau - 1) * per_tap();
  }
  int xx(int tau, int r, int c) const { return tap_offset(tau) + c * nx + r; }
  int xy(int tau, int r, int c) const { return tap_offset(tau) + nx * nx + c * nx + r; }
  int ux(int tau, int r, int c) const { return tap_offset(tau) + nx * nx + nx * ny + c * nu + r; }
  int uy(int tau, int r, int c) const {
    return tau == 0 ? c * nu + r : tap_offset(tau) + nx * nx + nx * ny + nu * nx + c * nu + r;
  }
  int total() const { return nu * ny + T * per_tap(); }
};

}  // namespace detail

// One stacked equality-constrained least squares over all four response
// members, enforcing both affine achievability families coefficient-wise over
// tau = 0..T with hard FIR terminal conditions.
inline OfSynthesisResult synth_of_h2_quadruple(const LtiSystem& sys, const SynthesisSpec& spec) {
  sys.validate();
  spec.validate(sys.nx(), sys.nu());
  const int nx = sys.nx(), ny = sys.ny(), nu = sys.nu(), T = spec.horizon;
  const detail::QuadrupleLayout lay{nx, ny, nu, T};

  const MaskSeries* m_xx = nullptr;
  const MaskSeries* m_xy = nullptr;
  const MaskSeries* m_ux = nullptr;
  const MaskSeries* m_uy = nullptr;
  if (spec.pattern) {
    auto pick = [](const std::optional<MaskSeries>& m) -> const MaskSeries* {
      return (m && !m->empty()) ? &*m : nullptr;
    };
    m_xx = pick(spec.pattern->phi_xx);
    m_xy = pick(spec.pattern->phi_xy);
    m_ux = pick(spec.pattern->phi_ux);
    m_uy = pick(spec.pattern->phi_uy);
  }
  for (int j = 0; j < nx; ++j)
    if (m_xx && !m_xx->allows(1, j, j))
      throw InfeasibleSynthesis("state response first tap: pattern excludes diagonal entry (" +
                                    std::to_string(j) + "," + std::to_string(j) + ")",
                                1.0);

  std::vector<int> free_idx(static_cast<size_t>(lay.total()), -1);
  int free_count = 0;
  auto mark = [&](int idx, const MaskSeries* m, int tau, int r, int c) {
    if (!m || m->allows(tau, r, c)) free_idx[static_cast<size_t>(idx)] = free_count++;
  };
  for (int c = 0; c < ny; ++c)
    for (int r = 0; r < nu; ++r) mark(lay.uy(0, r, c), m_uy, 0, r, c);
  for (int tau = 1; tau <= T; ++tau) {
    for (int c = 0; c < nx; ++c)
      for (int r = 0; r < nx; ++r) mark(lay.xx(tau, r, c), m_xx, tau, r, c);
    for (int c = 0; c < ny; ++c)
      for (int r = 0; r < nx; ++r) mark(lay.xy(tau, r, c), m_xy, tau, r, c);
    for (int c = 0; c < nx; ++c)
      for (int r = 0; r < nu; ++r) mark(lay.ux(tau, r, c), m_ux, tau, r, c);
    for (int c = 0; c < ny; ++c)
      for (int r = 0; r < nu; ++r) mark(lay.uy(tau, r, c), m_uy, tau, r, c);
  }

  MatrixXd H = MatrixXd::Zero(free_count, free_count);
  const MatrixXd Q = spec.q_sqrt.transpose() * spec.q_sqrt;
  const MatrixXd R = spec.r_sqrt.transpose() * spec.r_sqrt;
  auto add_column_block = [&](const MatrixXd& W, double weight, auto index_of, int tau, int dim, int cols) {
    if (weight == 0.0) return;
    for (int c = 0; c < cols; ++c)
      for (int a = 0; a < dim; ++a) {
        const int fa = free_idx[static_cast<size_t>(index_of(tau, a, c))];
        if (fa < 0) continue;
        for (int b = 0; b < dim; ++b) {
          const int fb = free_idx[static_cast<size_t>(index_of(tau, b, c))];
          if (fb >= 0) H(fa, fb) += weight * W(a, b);
        }
      }
  };
  auto ixx = [&](int tau, int r, int c) { return lay.xx(tau, r, c); };
  auto ixy = [&](int tau, int r, int c) { return lay.xy(tau, r, c); };
  auto iux = [&](int tau, int r, int c) { return lay.ux(tau, r, c); };
  auto iuy = [&](int tau, int r, int c) { return lay.uy(tau, r, c); };
  add_column_block(R, spec.w_uy, iuy, 0, nu, ny);
  for (int tau = 1; tau <= T; ++tau) {
    add_column_block(Q, spec.w_xx, ixx, tau, nx, nx);
    add_column_block(Q, spec.w_xy, ixy, tau, nx, ny);
    add_column_block(R, spec.w_ux, iux, tau, nu, nx);
    add_column_block(R, spec.w_uy, iuy, tau, nu, ny);
  }

  detail::ConstraintBuilder cb(free_count);
  auto at_or_skip = [&](int idx, int tau) { return (tau >= 1 && tau <= T) ? free_idx[static_cast<size_t>(idx)] : -1; };
  auto uy_or_skip = [&](int idx, int tau) { return (tau >= 0 && tau <= T) ? free_idx[static_cast<size_t>(idx)] : -1; };
  for (int sigma = 0; sigma <= T; ++sigma) {
    const std::string tag = " at sigma=" + std::to_string(sigma);
    // (zI - A) Phi_xx - B Phi_ux = I, coefficient of z^-sigma.
    for (int j = 0; j < nx; ++j)
      for (int i = 0; i < nx; ++i) {
        cb.begin_row("state-channel left recursion" + tag, (sigma == 0 && i == j) ? 1.0 : 0.0);
        if (sigma + 1 <= T) cb.add(at_or_skip(lay.xx(sigma + 1, i, j), sigma + 1), 1.0);
        if (sigma >= 1) {
          for (int l = 0; l < nx; ++l) cb.add(at_or_skip(lay.xx(sigma, l, j), sigma), -sys.A(i, l));
          for (int k = 0; k < nu; ++k) cb.add(at_or_skip(lay.ux(sigma, k, j), sigma), -sys.B(i, k));
        }
      }
    // (zI - A) Phi_xy - B Phi_uy = 0.
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        cb.begin_row("measurement-channel left recursion" + tag, 0.0);
        if (sigma + 1 <= T) cb.add(at_or_skip(lay.xy(sigma + 1, i, j), sigma + 1), 1.0);
        if (sigma >= 1)
          for (int l = 0; l < nx; ++l) cb.add(at_or_skip(lay.xy(sigma, l, j), sigma), -sys.A(i, l));
        for (int k = 0; k < nu; ++k) cb.add(uy_or_skip(lay.uy(sigma, k, j), sigma), -sys.B(i, k));
      }
    // Phi_xx (zI - A) - Phi_xy C = I.
    for (int j = 0; j < nx; ++j)
      for (int i = 0; i < nx; ++i) {
        cb.begin_row("state-channel right recursion" + tag, (sigma == 0 && i == j) ? 1.0 : 0.0);
        if (sigma + 1 <= T) cb.add(at_or_skip(lay.xx(sigma + 1, i, j), sigma + 1), 1.0);
        if (sigma >= 1) {
          for (int l = 0; l < nx; ++l) cb.add(at_or_skip(lay.xx(sigma, i, l), sigma), -sys.A(l, j));
          for (int m = 0; m < ny; ++m) cb.add(at_or_skip(lay.xy(sigma, i, m), sigma), -sys.C(m, j));
        }
      }
    // Phi_ux (zI - A) - Phi_uy C = 0.
    for (int j = 0; j < nx; ++j)
      for (int k = 0; k < nu; ++k) {
        cb.begin_row("input-channel right recursion" + tag, 0.0);
        if (sigma + 1 <= T) cb.add(at_or_skip(lay.ux(sigma + 1, k, j), sigma + 1), 1.0);
        if (sigma >= 1)
          for (int l = 0; l < nx; ++l) cb.add(at_or_skip(lay.ux(sigma, k, l), sigma), -sys.A(l, j));
        for (int m = 0; m < ny; ++m) cb.add(uy_or_skip(lay.uy(sigma, k, m), sigma), -sys.C(m, j));
      }
  }
  cb.finalize();

  const MatrixXd E = cb.matrix();
  const VectorXd d = cb.rhs();
  const auto sol = solve_equality_ls(H, VectorXd::Zero(free_count), E, d);
  detail::throw_if_violated(cb, sol, E, d);

  auto extract = [&](auto index_of, int start, int rows, int cols) {
    SpectralSeries s = SpectralSeries::zeros(start, T - start + 1, rows, cols);
    for (int tau = start; tau <= T; ++tau) {
      MatrixXd m = MatrixXd::Zero(rows, cols);
      for (int c = 0; c < cols; ++c)
        for (int r = 0; r < rows; ++r) {
          const int f = free_idx[static_cast<size_t>(index_of(tau, r, c))];
          if (f >= 0) m(r, c) = sol.v(f);
        }
      s.set(tau, std::move(m));
    }
    return s;
  };

  OfSynthesisResult out;
  out.response.phi_xx = extract(ixx, 1, nx, nx);
  out.response.phi_xy = extract(ixy, 1, nx, ny);
  out.response.phi_ux = extract(iux, 1, nu, nx);
  out.response.phi_uy = extract(iuy, 0, nu, ny);
  out.kkt_gradient_norm = sol.kkt_gradient_norm;
  for (int tau = 0; tau <= T; ++tau) {
    if (tau >= 1) {
      out.objective += spec.w_xx * (spec.q_sqrt * out.response.phi_xx.tap(tau)).squaredNorm();
      out.objective += spec.w_xy * (spec.q_sqrt * out.response.phi_xy.tap(tau)).squaredNorm();
      out.objective += spec.w_ux * (spec.r_sqrt * out.response.phi_ux.tap(tau)).squaredNorm();
    }
    out.objective += spec.w_uy * (spec.r_sqrt * out.response.phi_uy.tap(tau)).squaredNorm();
  }
  return out;
}

struct OfResidualReport {
  double interior = 0.0;  // residual over coefficients strictly inside the horizon
  double boundary = 0.0;  // residual of the final coefficient (truncation boundary)
  bool within(double tol) const { return interior <= tol && boundary <= tol; }
};

inline OfResidualReport validate_of_achievability(const SystemResponseOF& resp, const LtiSystem& sys) {
  const int H = std::max(std::max(resp.phi_xx.horizon(), resp.phi_xy.horizon()),
                         std::max(resp.phi_ux.horizon(), resp.phi_uy.horizon()));
  OfResidualReport rep;
  auto record = [&](int sigma, const MatrixXd& r) {
    double& slot = sigma == H ? rep.boundary : rep.interior;
    slot = std::max(slot, r.cwiseAbs().maxCoeff());
  };
  const MatrixXd I = MatrixXd::Identity(sys.nx(), sys.nx());
  for (int sigma = 0; sigma <= H; ++sigma) {
    const MatrixXd rhs1 = sigma == 0 ? I : MatrixXd::Zero(sys.nx(), sys.nx());
    record(sigma, resp.phi_xx.at(sigma + 1) - sys.A * resp.phi_xx.at(sigma) - sys.B * resp.phi_ux.at(sigma) - rhs1);
    record(sigma, resp.phi_xy.at(sigma + 1) - sys.A * resp.phi_xy.at(sigma) - sys.B * resp.phi_uy.at(sigma));
    record(sigma, resp.phi_xx.at(sigma + 1) - resp.phi_xx.at(sigma) * sys.A - resp.phi_xy.at(sigma) * sys.C - rhs1);
    record(sigma, resp.phi_ux.at(sigma + 1) - resp.phi_ux.at(sigma) * sys.A - resp.phi_uy.at(sigma) * sys.C);
  }
  return rep;
}

// Closed-loop channel weights for the Youla-style route. Each closed-loop map
// is affine in Phi_uy; eval_horizon controls the truncation of the resolvent
// products (0 picks a default tied to the FIR horizon).
struct ClosedLoopWeights {
  double w_xx = 1.0;
  double w_xy = 0.0;
  double w_ux = 0.0;
  double w_uy = 0.0;
  int eval_horizon = 0;
};

inline SpectralSeries synth_of_youla(const LtiSystem& sys, const SynthesisSpec& spec,
                                     const ClosedLoopWeights& weights, double* objective_out = nullptr) {
  sys.validate();
  spec.validate(sys.nx(), sys.nu());
  if (!is_schur_stable(sys.A).stable)
    throw std::domain_error("synth_of_youla: requires a Schur-stable A");

  const int nx = sys.nx(), ny = sys.ny(), nu = sys.nu(), T = spec.horizon;
  const int H = weights.eval_horizon > 0 ? weights.eval_horizon : std::max(4 * T, 32);
  detail::require(H >= T + 2, "synth_of_youla: eval horizon must exceed the FIR horizon");

  const SpectralSeries delta = truncated_resolvent(sys.A, H).series;
  const SpectralSeries db = right_multiply(delta, sys.B);  // Delta B, tau = 1..H
  const SpectralSeries cd = left_multiply(sys.C, delta);   // C Delta, tau = 1..H

  const int nvars = (T + 1) * nu * ny;
  auto var_of = [&](int s, int p, int q) { return s * nu * ny + q * nu + p; };

  // Row blocks per weighted channel, (tau, entry) flattened column-major.
  long total_rows = 0;
  auto rows_for = [&](double w, int taps, long r) {
    if (w != 0.0) total_rows += static_cast<long>(taps) * r;
  };
  rows_for(weights.w_xx, H, spec.q_sqrt.rows() * nx);
  rows_for(weights.w_xy, H, spec.q_sqrt.rows() * ny);
  rows_for(weights.w_ux, H, spec.r_sqrt.rows() * nx);
  rows_for(weights.w_uy, T + 1, spec.r_sqrt.rows() * ny);

  MatrixXd M = MatrixXd::Zero(total_rows, nvars);
  VectorXd c = VectorXd::Zero(total_rows);
  long row0 = 0;

  auto scatter = [&](long base, int out_rows, int i, int j, int var, double coeff) {
    M(base + j * out_rows + i, var) += coeff;
  };

  if (weights.w_xx != 0.0) {
    const double sw = std::sqrt(weights.w_xx);
    const MatrixXd QF = sw * spec.q_sqrt;
    const int orows = static_cast<int>(QF.rows());
    std::vector<MatrixXd> qdb(static_cast<size_t>(H) + 1);
    for (int a = 1; a <= H; ++a) qdb[static_cast<size_t>(a)] = QF * db.tap(a);
    for (int tau = 1; tau <= H; ++tau) {
      const long base = row0 + static_cast<long>(tau - 1) * orows * nx;
      const MatrixXd cst = QF * delta.tap(tau);
      for (int j = 0; j < nx; ++j)
        for (int i = 0; i < orows; ++i) c(base + j * orows + i) = cst(i, j);
      for (int s = 0; s <= std::min(T, tau - 2); ++s)
        for (int a = 1; a <= tau - s - 1; ++a) {
          const int b = tau - s - a;
          const MatrixXd& L = qdb[static_cast<size_t>(a)];
          const MatrixXd& Rm = cd.tap(b);
          for (int p = 0; p < nu; ++p)
            for (int q = 0; q < ny; ++q) {
              const int var = var_of(s, p, q);
              for (int j = 0; j < nx; ++j)
                for (int i = 0; i < orows; ++i) scatter(base, orows, i, j, var, L(i, p) * Rm(q, j));
            }
        }
    }
    row0 += static_cast<long>(H) * orows * nx;
  }
  if (weights.w_xy != 0.0) {
    const double sw = std::sqrt(weights.w_xy);
    const MatrixXd QF = sw * spec.q_sqrt;
    const int orows = static_cast<int>(QF.rows());
    for (int tau = 1; tau <= H; ++tau) {
      const long base = row0 + static_cast<long>(tau - 1) * orows * ny;
      for (int s = std::max(0, tau - H); s <= std::min(T, tau - 1); ++s) {
        const int a = tau - s;
        const MatrixXd L = QF * db.tap(a);
        for (int p = 0; p < nu; ++p)
          for (int q = 0; q < ny; ++q) {
            const int var = var_of(s, p, q);
            for (int i = 0; i < orows; ++i) scatter(base, orows, i, q, var, L(i, p));
          }
      }
    }
    row0 += static_cast<long>(H) * orows * ny;
  }
  if (weights.w_ux != 0.0) {
    const double sw = std::sqrt(weights.w_ux);
    const MatrixXd RF = sw * spec.r_sqrt;
    const int orows = static_cast<int>(RF.rows());
    for (int tau = 1; tau <= H; ++tau) {
      const long base = row0 + static_cast<long>(tau - 1) * orows * nx;
      for (int s = std::max(0, tau - H); s <= std::min(T, tau - 1); ++s) {
        const int b = tau - s;
        const MatrixXd& Rm = cd.tap(b);
        for (int p = 0; p < nu; ++p)
          for (int q = 0; q < ny; ++q) {
            const int var = var_of(s, p, q);
            for (int j = 0; j < nx; ++j)
              for (int i = 0; i < orows; ++i) scatter(base, orows, i, j, var, RF(i, p) * Rm(q, j));
          }
      }
    }
    row0 += static_cast<long>(H) * orows * nx;
  }
  if (weights.w_uy != 0.0) {
    const double sw = std::sqrt(weights.w_uy);
    const MatrixXd RF = sw * spec.r_sqrt;
    const int orows = static_cast<int>(RF.rows());
    for (int tau = 0; tau <= T; ++tau) {
      const long base = row0 + static_cast<long>(tau) * orows * ny;
      for (int p = 0; p < nu; ++p)
        for (int q = 0; q < ny; ++q) {
          const int var = var_of(tau, p, q);
          for (int i = 0; i < orows; ++i) scatter(base, orows, i, q, var, RF(i, p));
        }
    }
    row0 += static_cast<long>(T + 1) * orows * ny;
  }

  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(M);
  const VectorXd f = cod.solve(-c);
  if (objective_out) *objective_out = (M * f + c).squaredNorm();

  SpectralSeries phi_uy = SpectralSeries::zeros(0, T + 1, nu, ny);
  for (int s = 0; s <= T; ++s) {
    MatrixXd tapm = MatrixXd::Zero(nu, ny);
    for (int q = 0; q < ny; ++q)
      for (int p = 0; p < nu; ++p) tapm(p, q) = f(var_of(s, p, q));
    phi_uy.set(s, std::move(tapm));
  }
  return phi_uy;
}

// Truncated quadruple induced by an FIR Phi_uy on a stable plant:
//   Phi_xx = Delta + Delta B Phi_uy C Delta,  Phi_xy = Delta B Phi_uy,
//   Phi_ux = Phi_uy C Delta.
inline SystemResponseOF quadruple_from_phiuy(const LtiSystem& sys, const SpectralSeries& phi_uy,
                                             int eval_horizon) {
  sys.validate();
  if (!is_schur_stable(sys.A).stable)
    throw std::domain_error("quadruple_from_phiuy: requires a Schur-stable A");
  detail::require(phi_uy.rows() == sys.nu() && phi_uy.cols() == sys.ny(),
                  "quadruple_from_phiuy: phi_uy must be nu x ny");
  detail::require(phi_uy.start_tau() == 0, "quadruple_from_phiuy: phi_uy must start at tau = 0");
  detail::require(eval_horizon >= phi_uy.horizon() + 2, "quadruple_from_phiuy: eval horizon too short");

  const auto resolvent = truncated_resolvent(sys.A, eval_horizon);
  const SpectralSeries& delta = resolvent.series;
  const SpectralSeries db = right_multiply(delta, sys.B);
  const SpectralSeries cd = left_multiply(sys.C, delta);

  SystemResponseOF out;
  out.phi_xy = convolve(db, phi_uy, eval_horizon);
  out.phi_ux = convolve(phi_uy, cd, eval_horizon);
  out.phi_xx = delta + convolve(out.phi_xy, cd, eval_horizon);
  out.phi_uy = phi_uy;
  out.truncated = true;
  out.tail_norm = resolvent.tail_norm;
  return out;
}

class SingularEvaluation : public std::runtime_error {
 public:
  explicit SingularEvaluation(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline Eigen::MatrixXcd invert_or_throw(const Eigen::MatrixXcd& m, const std::string& context) {
  Eigen::FullPivLU<Eigen::MatrixXcd> lu(m);
  if (!lu.isInvertible())
    throw SingularEvaluation("eval_controller_pointwise: singular " + context);
  return lu.inverse();
}

}  // namespace detail

// K(z) = Phi_u(z) Phi_x(z)^-1 for state feedback.
inline Eigen::MatrixXcd eval_controller_pointwise(const SystemResponseSF& resp, std::complex<double> z) {
  detail::require(std::abs(z) > 1.0, "eval_controller_pointwise: needs |z| > 1");
  const Eigen::MatrixXcd px = resp.phi_x.eval(z);
  const Eigen::MatrixXcd pu = resp.phi_u.eval(z);
  return pu * detail::invert_or_throw(px, "Phi_x(z)");
}

// K(z) = ((Phi_uy - Phi_ux Phi_xx^-1 Phi_xy)^-1 + D)^-1 for output feedback.
inline Eigen::MatrixXcd eval_controller_pointwise(const SystemResponseOF& resp, const LtiSystem& sys,
                                                  std::complex<double> z) {
  detail::require(std::abs(z) > 1.0, "eval_controller_pointwise: needs |z| > 1");
  const Eigen::MatrixXcd pxx = resp.phi_xx.eval(z);
  const Eigen::MatrixXcd pxy = resp.phi_xy.eval(z);
  const Eigen::MatrixXcd pux = resp.phi_ux.eval(z);
  const Eigen::MatrixXcd puy = resp.phi_uy.eval(z);
  const Eigen::MatrixXcd inner = puy - pux * detail::invert_or_throw(pxx, "Phi_xx(z)") * pxy;
  const Eigen::MatrixXcd li = detail::invert_or_throw(inner, "Phi_uy(z) - Phi_ux Phi_xx^-1 Phi_xy");
  return detail::invert_or_throw(li + sys.D.cast<std::complex<double>>(), "L(z)^-1 + D");
}

}  // namespace sls
