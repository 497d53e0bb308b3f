#pragma once
// Empirical internal-stability verification: unit impulses injected at every
// loop interconnection point (plant state, plant input, measurement, observer
// state) with decay verdicts for every observed internal signal, plus the
// closed-loop map identity check and the robustness margin certificate.

#include <Eigen/Dense>

#include <array>
#include <sstream>
#include <string>

#include "sls/architecture.hpp"
#include "sls/realization.hpp"
#include "sls/synthesis.hpp"

namespace sls {

enum class InjectionChannel { d_x = 0, d_u = 1, d_y = 2, d_xhat = 3 };
enum class ObservedSignal { x = 0, u = 1, y = 2, xhat = 3 };

inline const char* to_string(InjectionChannel c) {
  switch (c) {
    case InjectionChannel::d_x: return "d_x";
    case InjectionChannel::d_u: return "d_u";
    case InjectionChannel::d_y: return "d_y";
    default: return "d_xhat";
  }
}

inline const char* to_string(ObservedSignal s) {
  switch (s) {
    case ObservedSignal::x: return "x";
    case ObservedSignal::u: return "u";
    case ObservedSignal::y: return "y";
    default: return "xhat";
  }
}

struct ProbeEntry {
  double peak = 0.0;  // max |signal| over the whole run
  double tail = 0.0;  // max |signal| at or beyond the horizon
  bool decayed = false;
};

struct ProbeGrid {
  int horizon = 0;
  int steps = 0;
  double tol = 0.0;
  std::array<std::array<ProbeEntry, 4>, 4> entries{};  // [channel][signal]

  const ProbeEntry& at(InjectionChannel c, ObservedSignal s) const {
    return entries[static_cast<size_t>(c)][static_cast<size_t>(s)];
  }
  bool all_decayed() const {
    for (const auto& row : entries)
      for (const auto& e : row)
        if (!e.decayed) return false;
    return true;
  }

  std::string tails_csv() const {
    std::ostringstream os;
    os << "channel,x,u,y,xhat\n";
    for (int c = 0; c < 4; ++c) {
      os << to_string(static_cast<InjectionChannel>(c));
      for (int s = 0; s < 4; ++s) os << "," << entries[static_cast<size_t>(c)][static_cast<size_t>(s)].tail;
      os << "\n";
    }
    return os.str();
  }
};

// Impulse response of the closed loop formed by the plant and the simplified
// output-feedback realization, with one perturbation channel active. Returns
// the four observed signals per step. With D = 0 the actual controller object
// is stepped; with D != 0 the algebraic loop across plant and controller is
// resolved through delta = C(x - xhat) + D d_u + d_y, which is the same
// relation the realization solves implicitly.
struct ProbeTraces {
  std::vector<VectorXd> x, u, y, xhat;
};

namespace detail {

inline VectorXd unit_impulse(bool active, int dim, int coord, double amplitude) {
  VectorXd v = VectorXd::Zero(dim);
  if (active) v(coord) = amplitude;
  return v;
}

}  // namespace detail

inline ProbeTraces probe_impulse_response(const LtiSystem& sys, OfSimplifiedController& ctl,
                                          InjectionChannel channel, int coord, int steps,
                                          double amplitude = 1.0) {
  sys.validate();
  detail::require(ctl.measurement_dim() == sys.ny() && ctl.control_dim() == sys.nu(),
                  "probe_impulse_response: controller dimensions mismatch");
  ProbeTraces tr;
  const bool feedthrough = !sys.D.isZero(0.0);
  VectorXd x = VectorXd::Zero(sys.nx());
  if (!feedthrough) {
    ctl.reset();
    for (int t = 0; t < steps; ++t) {
      const VectorXd d_x = detail::unit_impulse(channel == InjectionChannel::d_x && t == 0, sys.nx(), coord, amplitude);
      const VectorXd d_u = detail::unit_impulse(channel == InjectionChannel::d_u && t == 0, sys.nu(), coord, amplitude);
      const VectorXd d_y = detail::unit_impulse(channel == InjectionChannel::d_y && t == 0, sys.ny(), coord, amplitude);
      const VectorXd d_xh = detail::unit_impulse(channel == InjectionChannel::d_xhat && t == 0, sys.nx(), coord, amplitude);
      const VectorXd y = sys.C * x + d_y;
      tr.xhat.push_back(ctl.state_estimate());
      const VectorXd u_ctl = ctl.step_perturbed(y, d_xh);
      const VectorXd u = u_ctl + d_u;
      tr.x.push_back(x);
      tr.y.push_back(y);
      tr.u.push_back(u);
      x = plant_step(sys, x, u, d_x);
    }
    return tr;
  }

  // Feedthrough path: track the observer state explicitly and close the loop
  // through the disturbance-reconstruction identity.
  const SpectralSeries& phi = ctl.phi_uy();
  Signal delta_hist(sys.ny());
  VectorXd xhat = VectorXd::Zero(sys.nx());
  for (int t = 0; t < steps; ++t) {
    const VectorXd d_x = detail::unit_impulse(channel == InjectionChannel::d_x && t == 0, sys.nx(), coord, amplitude);
    const VectorXd d_u = detail::unit_impulse(channel == InjectionChannel::d_u && t == 0, sys.nu(), coord, amplitude);
    const VectorXd d_y = detail::unit_impulse(channel == InjectionChannel::d_y && t == 0, sys.ny(), coord, amplitude);
    const VectorXd d_xh = detail::unit_impulse(channel == InjectionChannel::d_xhat && t == 0, sys.nx(), coord, amplitude);
    const VectorXd delta = sys.C * (x - xhat) + sys.D * d_u + d_y;
    delta_hist.push(delta);
    VectorXd u_ctl = VectorXd::Zero(sys.nu());
    for (int tau = phi.start_tau(); tau <= phi.horizon(); ++tau)
      u_ctl += phi.tap(tau) * delta_hist.at(t - tau);
    const VectorXd u = u_ctl + d_u;
    const VectorXd y = sys.C * x + sys.D * u + d_y;
    tr.x.push_back(x);
    tr.u.push_back(u);
    tr.y.push_back(y);
    tr.xhat.push_back(xhat);
    xhat = sys.A * xhat + sys.B * u_ctl + d_xh;
    x = plant_step(sys, x, u, d_x);
  }
  return tr;
}

// 16 channel/signal pairs, every coordinate pulsed, decay verdict per pair.
inline ProbeGrid internal_stability_probe(const LtiSystem& sys, OfSimplifiedController& ctl,
                                          int horizon, double tol) {
  detail::require(horizon >= 1, "internal_stability_probe: horizon must be positive");
  ProbeGrid grid;
  grid.horizon = horizon;
  grid.steps = horizon + std::max(horizon / 2, 25);
  grid.tol = tol;
  for (int c = 0; c < 4; ++c) {
    const auto channel = static_cast<InjectionChannel>(c);
    const int coords = (channel == InjectionChannel::d_u)   ? sys.nu()
                       : (channel == InjectionChannel::d_y) ? sys.ny()
                                                            : sys.nx();
    for (int coord = 0; coord < coords; ++coord) {
      const auto tr = probe_impulse_response(sys, ctl, channel, coord, grid.steps);
      const std::array<const std::vector<VectorXd>*, 4> signals{&tr.x, &tr.u, &tr.y, &tr.xhat};
      for (int s = 0; s < 4; ++s) {
        auto& e = grid.entries[static_cast<size_t>(c)][static_cast<size_t>(s)];
        for (int t = 0; t < grid.steps; ++t) {
          const double mag = (*signals[static_cast<size_t>(s)])[static_cast<size_t>(t)].cwiseAbs().maxCoeff();
          e.peak = std::max(e.peak, mag);
          if (t >= horizon) e.tail = std::max(e.tail, mag);
        }
      }
    }
  }
  for (auto& row : grid.entries)
    for (auto& e : row) e.decayed = e.tail <= tol;
  return grid;
}

struct ClosedLoopMapReport {
  double max_dev_x = 0.0;       // against the Phi_x columns within the horizon
  double max_dev_u = 0.0;       // against the Phi_u columns within the horizon
  double max_beyond_fir = 0.0;  // any response mass after tau = T
  bool within(double tol) const { return max_dev_x <= tol && max_dev_u <= tol; }
};

// The core parameterization claim, checked by simulation: a state impulse
// d_x = e_j at t = 0 must reproduce column j of the synthesized spectral
// elements in both the state and input traces, with nothing left beyond the
// FIR horizon.
inline ClosedLoopMapReport closed_loop_map_check(const LtiSystem& sys, const SystemResponseSF& resp,
                                                 int extra_steps = 10) {
  sys.validate();
  detail::require(sys.is_state_feedback(), "closed_loop_map_check: needs a state-feedback plant");
  const int T = resp.phi_x.horizon();
  const int steps = T + 1 + extra_steps;
  ClosedLoopMapReport rep;
  for (int j = 0; j < sys.nx(); ++j) {
    SfStandardController ctl(resp);
    VectorXd x = VectorXd::Zero(sys.nx());
    for (int t = 0; t < steps; ++t) {
      const VectorXd u = ctl.step(x);
      if (t >= 1 && t <= T) {
        rep.max_dev_x = std::max(rep.max_dev_x, (x - resp.phi_x.at(t).col(j)).cwiseAbs().maxCoeff());
        rep.max_dev_u = std::max(rep.max_dev_u, (u - resp.phi_u.at(t).col(j)).cwiseAbs().maxCoeff());
      }
      if (t > T)
        rep.max_beyond_fir = std::max({rep.max_beyond_fir, x.cwiseAbs().maxCoeff(), u.cwiseAbs().maxCoeff()});
      const VectorXd d = t == 0 ? VectorXd(VectorXd::Unit(sys.nx(), j)) : VectorXd(VectorXd::Zero(sys.nx()));
      x = plant_step(sys, x, u, d);
    }
  }
  return rep;
}

struct ExtensionCertificate {
  RobustMargin margin;
  double simulated_peak = 0.0;
  double simulated_tail = 0.0;
  bool simulation_decayed = false;
};

// Margin check for running a controller designed for the stable part A_s on
// the full plant A_s + A_u, backed by a full-plant impulse simulation. A
// margin at or above one is reported, never thrown; the simulation still runs.
inline ExtensionCertificate certify_unstable_extension(const LtiSystem& sys_full, const MatrixXd& A_s,
                                                       const MatrixXd& A_u, const SystemResponseSF& resp,
                                                       int horizon = 0, double tol = 1e-6) {
  sys_full.validate();
  detail::require(((A_s + A_u) - sys_full.A).cwiseAbs().maxCoeff() == 0.0,
                  "certify_unstable_extension: A_s + A_u must equal the full A");
  ExtensionCertificate cert;
  cert.margin = robust_margin(A_s, A_u, resp.phi_x);

  const int T = resp.phi_u.horizon();
  const int steps = horizon > 0 ? horizon : std::max(8 * T, 120);
  const int tail_from = (3 * steps) / 4;
  LtiSystem design = LtiSystem::state_feedback_plant(A_s, sys_full.B);
  for (int j = 0; j < sys_full.nx(); ++j) {
    SfSimplifiedController ctl(design, resp.phi_u);
    VectorXd x = VectorXd::Zero(sys_full.nx());
    for (int t = 0; t < steps; ++t) {
      const VectorXd u = ctl.step(x);
      const double mag = x.cwiseAbs().maxCoeff();
      cert.simulated_peak = std::max(cert.simulated_peak, mag);
      if (t >= tail_from) cert.simulated_tail = std::max(cert.simulated_tail, mag);
      const VectorXd d = t == 0 ? VectorXd(VectorXd::Unit(sys_full.nx(), j)) : VectorXd(VectorXd::Zero(sys_full.nx()));
      x = plant_step(sys_full, x, u, d);
    }
  }
  cert.simulation_decayed = std::isfinite(cert.simulated_tail) && cert.simulated_tail <= tol;
  return cert;
}

}  // namespace sls
