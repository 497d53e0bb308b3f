#pragma once
// Builders that deploy a synthesized controller onto a network of basic
// components, one builder per architecture, plus the monolithic reference
// loop every deployment is checked against.
//
// Node id convention: sensor i = i, the hub (centralized controller or global
// state keeper) = 500, actuator k = 1000 + k. Sensors and actuators carry
// their site index for locality audits; hubs sit off the physical graph.
//
// Message routes are pruned on exact structural zeros of the supplied
// matrices and response supports. Multiplier matrices are instantiated dense
// (worst-case inventory), so measured memory matches the closed-form counts
// for dense responses while localized responses still localize traffic.
//
// Output-feedback deployments: the per-step schedule admits either D = 0
// (any Phi_uy) or a strictly proper Phi_uy (any D). With both D != 0 and
// Phi_uy[0] != 0 the feedthrough loop crosses node boundaries within a step
// and the builders refuse it.

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "sls/lti.hpp"
#include "sls/network.hpp"
#include "sls/realization.hpp"
#include "sls/spectral.hpp"
#include "sls/synthesis.hpp"
#include "sls/trace.hpp"

namespace sls {

namespace arch {

constexpr int kHubId = 500;
inline int sensor_id(int i) { return i; }
inline int actuator_id(int k) { return 1000 + k; }

inline std::vector<int> iota(int n) {
  std::vector<int> v(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) v[static_cast<size_t>(i)] = i;
  return v;
}

// Column indices i with some nonzero Phi[tau](k, i).
inline std::vector<int> row_support(const SpectralSeries& s, int k) {
  std::vector<int> cols;
  for (int i = 0; i < s.cols(); ++i) {
    bool nz = false;
    for (int tau = s.start_tau(); tau <= s.horizon() && !nz; ++tau) nz = s.tap(tau)(k, i) != 0.0;
    if (nz) cols.push_back(i);
  }
  return cols;
}

// Row indices k with some nonzero Phi[tau](k, i).
inline std::vector<int> col_support(const SpectralSeries& s, int i) {
  std::vector<int> rows;
  for (int k = 0; k < s.rows(); ++k) {
    bool nz = false;
    for (int tau = s.start_tau(); tau <= s.horizon() && !nz; ++tau) nz = s.tap(tau)(k, i) != 0.0;
    if (nz) rows.push_back(k);
  }
  return rows;
}

// Boolean reachability of the pair (A, b): support of sum_t A^t b.
inline std::vector<bool> reach_pattern(const MatrixXd& A, const VectorXd& b) {
  const int n = static_cast<int>(A.rows());
  std::vector<bool> reach(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) reach[static_cast<size_t>(i)] = b(i) != 0.0;
  for (int round = 0; round < n; ++round) {
    bool grew = false;
    for (int i = 0; i < n; ++i) {
      if (reach[static_cast<size_t>(i)]) continue;
      for (int j = 0; j < n; ++j)
        if (A(i, j) != 0.0 && reach[static_cast<size_t>(j)]) {
          reach[static_cast<size_t>(i)] = true;
          grew = true;
          break;
        }
    }
    if (!grew) break;
  }
  return reach;
}

// Tapped delay line: head stays a named buffer, `length` unit delays follow.
// Returns the tap variable names, taps[d] holding the head value d steps ago.
inline std::vector<std::string> delay_line(NodeProgram& n, const std::string& base,
                                           const std::string& head, int dim, int length) {
  std::vector<std::string> taps{head};
  std::string prev = head;
  for (int d = 1; d <= length; ++d) {
    const std::string name = base + std::to_string(d);
    n.delay(name, prev, dim);
    taps.push_back(name);
    prev = name;
  }
  return taps;
}

inline MatrixXd rows_of(const MatrixXd& m, const std::vector<int>& rows) {
  MatrixXd out(static_cast<long>(rows.size()), m.cols());
  for (size_t r = 0; r < rows.size(); ++r) out.row(static_cast<long>(r)) = m.row(rows[r]);
  return out;
}

inline MatrixXd cols_of(const MatrixXd& m, const std::vector<int>& cols) {
  MatrixXd out(m.rows(), static_cast<long>(cols.size()));
  for (size_t c = 0; c < cols.size(); ++c) out.col(static_cast<long>(c)) = m.col(cols[c]);
  return out;
}

inline void require_stable(const LtiSystem& sys, const char* who) {
  if (!is_schur_stable(sys.A).stable)
    throw std::domain_error(std::string(who) + ": simplified realization requires a Schur-stable A");
}

// Sensors that only forward their raw sample to the hub.
inline void add_relay_sensors(Network& net, int count, const char* label_prefix) {
  for (int i = 0; i < count; ++i) {
    auto& s = net.add_node(sensor_id(i), "s" + std::to_string(i), NodeRole::sensor, i);
    s.sense(0, "raw", {i});
    s.disseminate(0, "raw", 1, {{kHubId, "hub_in", {0}, {i}, label_prefix + std::to_string(i)}});
  }
}

// Actuators that only assemble their control sample from the hub.
inline void add_relay_actuators(Network& net, int count) {
  for (int k = 0; k < count; ++k) {
    auto& a = net.add_node(actuator_id(k), "a" + std::to_string(k), NodeRole::actuator, k);
    a.collect(2, {"u_k", "hub_out", 1, CollectorOp::Mode::stack});
    a.actuate(2, "u_k", {k});
  }
}

inline std::vector<DisseminatorRoute> hub_to_actuator_routes(int nu, const std::string& label) {
  std::vector<DisseminatorRoute> routes;
  for (int k = 0; k < nu; ++k) routes.push_back({actuator_id(k), "hub_out", {k}, {0}, label + std::to_string(k)});
  return routes;
}

// Shared sensor program for the global-state and distributed state-feedback
// architectures: sample x_i, extract the column -A^(*i) x_i for the neighbor
// sensors, and form delta_i from last step's received sums.
inline void add_sf_computing_sensor(Network& net, const LtiSystem& sys, int i) {
  const int nx = sys.nx();
  auto& s = net.add_node(sensor_id(i), "s" + std::to_string(i), NodeRole::sensor, i);
  s.delay("a_prev", "a_sum_w", 1);
  s.delay("b_prev", "b_sum_w", 1);
  s.sense(0, "xi_raw", {i});
  s.buffer(0, "x_i", "xi_raw", 1);
  s.multiply(0, "acol_w", "x_i", -sys.A.col(i));
  s.buffer(0, "acol", "acol_w", nx);
  std::vector<DisseminatorRoute> a_routes;
  for (int j = 0; j < nx; ++j)
    if (sys.A(j, i) != 0.0)
      a_routes.push_back({sensor_id(j), "a_parts", {j}, {}, "-A(" + std::to_string(j) + "," + std::to_string(i) + ")x" + std::to_string(i)});
  if (!a_routes.empty()) s.disseminate(0, "acol", nx, std::move(a_routes));
  s.add(0, "delta_i_w", {"x_i", "a_prev", "b_prev"}, 1);

  std::vector<std::string> a_ins, b_ins;
  for (int j = 0; j < nx; ++j)
    if (sys.A(i, j) != 0.0) a_ins.push_back("a_in_" + std::to_string(sensor_id(j)));
  for (int k = 0; k < sys.nu(); ++k)
    if (sys.B(i, k) != 0.0) b_ins.push_back("b_in_" + std::to_string(actuator_id(k)));
  s.collect(1, {"a_in", "a_parts", 1, CollectorOp::Mode::parts});
  s.add(1, "a_sum_w", std::move(a_ins), 1);
  s.collect(3, {"b_in", "b_parts", 1, CollectorOp::Mode::parts});
  s.add(3, "b_sum_w", std::move(b_ins), 1);
}

// Actuator-side -B^(*k) u_k extraction shared by the same architectures.
inline void add_sf_b_feedback(Network& net, const LtiSystem& sys, int k, int stage) {
  auto& a = net.node(actuator_id(k));
  a.multiply(stage, "bcol_w", "u_k", -sys.B.col(k));
  a.buffer(stage, "bcol", "bcol_w", sys.nx());
  std::vector<DisseminatorRoute> routes;
  for (int i = 0; i < sys.nx(); ++i)
    if (sys.B(i, k) != 0.0)
      routes.push_back({sensor_id(i), "b_parts", {i}, {}, "-B(" + std::to_string(i) + "," + std::to_string(k) + ")u" + std::to_string(k)});
  if (!routes.empty()) a.disseminate(stage, "bcol", sys.nx(), std::move(routes));
}

}  // namespace arch

// Centralized deployment of the one-convolution state-feedback realization:
// the controller node reconstructs delta from -Ax[t-1] - Bu[t-1] and runs the
// Phi_u multiplier array over the delta history.
inline Network build_centralized_sf(const LtiSystem& sys, const SystemResponseSF& resp) {
  sys.validate();
  arch::require_stable(sys, "build_centralized_sf");
  const int nx = sys.nx(), nu = sys.nu(), T = resp.phi_u.horizon();
  Network net;
  net.input_dim = nx;
  net.output_dim = nu;
  net.senses_output = false;

  arch::add_relay_sensors(net, nx, "x");
  auto& c = net.add_node(arch::kHubId, "ctrl", NodeRole::controller);
  c.delay("ax_prev", "ax_next", nx);
  c.delay("bu_prev", "bu_next", nx);
  c.collect(1, {"x_w", "hub_in", nx, CollectorOp::Mode::stack});
  c.buffer(1, "x", "x_w", nx);
  c.add(1, "delta0_w", {"x", "ax_prev", "bu_prev"}, nx);
  c.buffer(1, "delta0", "delta0_w", nx);
  const auto taps = arch::delay_line(c, "dchain", "delta0", nx, T - 1);
  std::vector<std::string> partials;
  for (int tau = 1; tau <= T; ++tau) {
    const std::string p = "p" + std::to_string(tau);
    c.multiply(1, p, taps[static_cast<size_t>(tau - 1)], resp.phi_u.tap(tau));
    partials.push_back(p);
  }
  c.add(1, "u_w", std::move(partials), nu);
  c.buffer(1, "u", "u_w", nu);
  c.multiply(1, "ax_next", "x", -sys.A);
  c.multiply(1, "bu_next", "u", -sys.B);
  c.disseminate(1, "u", nu, arch::hub_to_actuator_routes(nu, "u"));
  arch::add_relay_actuators(net, nu);
  return net;
}

// Centralized deployment of the standard two-convolution realization; valid
// for unstable plants as well. Multipliers hold -Phi_x so the stored estimate
// is -xhat and the delta adder only ever adds.
inline Network build_original_sf(const LtiSystem& sys, const SystemResponseSF& resp) {
  sys.validate();
  const int nx = sys.nx(), nu = sys.nu();
  const int T = resp.phi_u.horizon();
  detail::require(resp.phi_x.horizon() == T, "build_original_sf: needs the full FIR pair");
  Network net;
  net.input_dim = nx;
  net.output_dim = nu;
  net.senses_output = false;

  arch::add_relay_sensors(net, nx, "x");
  auto& c = net.add_node(arch::kHubId, "ctrl", NodeRole::controller);
  c.delay("xhneg_prev", "xhneg_next", nx);
  c.collect(1, {"x_w", "hub_in", nx, CollectorOp::Mode::stack});
  c.buffer(1, "x", "x_w", nx);
  c.add(1, "delta0_w", {"x", "xhneg_prev"}, nx);
  c.buffer(1, "delta0", "delta0_w", nx);
  const auto taps = arch::delay_line(c, "dchain", "delta0", nx, T - 1);
  std::vector<std::string> u_parts, xh_parts;
  for (int tau = 1; tau <= T; ++tau) {
    const std::string p = "pu" + std::to_string(tau);
    c.multiply(1, p, taps[static_cast<size_t>(tau - 1)], resp.phi_u.tap(tau));
    u_parts.push_back(p);
  }
  for (int tau = 2; tau <= T; ++tau) {
    const std::string q = "px" + std::to_string(tau);
    c.multiply(1, q, taps[static_cast<size_t>(tau - 2)], -resp.phi_x.tap(tau));
    xh_parts.push_back(q);
  }
  c.add(1, "u_w", std::move(u_parts), nu);
  c.buffer(1, "u", "u_w", nu);
  c.add(1, "xhneg_next", std::move(xh_parts), nx);
  c.disseminate(1, "u", nu, arch::hub_to_actuator_routes(nu, "u"));
  arch::add_relay_actuators(net, nu);
  return net;
}

namespace arch {

// Actuator with the Phi_u row multiplier array over a stacked delta history,
// used by the global-state (full delta) and naive distributed (support-pruned
// delta) state-feedback architectures.
inline void add_sf_convolving_actuator(Network& net, const LtiSystem& sys, const SpectralSeries& phi_u,
                                       int k, const std::vector<int>& delta_cols, int stage) {
  const int T = phi_u.horizon();
  const int dim = static_cast<int>(delta_cols.size());
  auto& a = net.add_node(actuator_id(k), "a" + std::to_string(k), NodeRole::actuator, k);
  std::vector<std::string> partials;
  if (dim > 0) {
    a.collect(stage, {"delta0_w", "delta_in", dim, CollectorOp::Mode::stack});
    a.buffer(stage, "delta0", "delta0_w", dim);
    const auto taps = delay_line(a, "dchain", "delta0", dim, T - 1);
    for (int tau = 1; tau <= T; ++tau) {
      const std::string p = "p" + std::to_string(tau);
      a.multiply(stage, p, taps[static_cast<size_t>(tau - 1)], cols_of(phi_u.tap(tau).row(k), delta_cols));
      partials.push_back(p);
    }
  }
  a.add(stage, "uk_w", std::move(partials), 1);
  a.buffer(stage, "u_k", "uk_w", 1);
  a.actuate(stage, "u_k", {k});
  add_sf_b_feedback(net, sys, k, stage);
}

}  // namespace arch

// Sensors compute delta_i locally, a global state keeper stacks delta[t] and
// forwards it, and each actuator convolves its Phi_u rows.
inline Network build_global_state_sf(const LtiSystem& sys, const SystemResponseSF& resp) {
  sys.validate();
  arch::require_stable(sys, "build_global_state_sf");
  const int nx = sys.nx(), nu = sys.nu();
  Network net;
  net.input_dim = nx;
  net.output_dim = nu;
  net.senses_output = false;

  for (int i = 0; i < nx; ++i) {
    arch::add_sf_computing_sensor(net, sys, i);
    net.node(arch::sensor_id(i))
        .buffer(0, "delta_i", "delta_i_w", 1)
        .disseminate(0, "delta_i", 1, {{arch::kHubId, "delta_in", {0}, {i}, "delta" + std::to_string(i)}});
  }
  auto& g = net.add_node(arch::kHubId, "gsk", NodeRole::global_state_keeper);
  g.collect(1, {"delta_w", "delta_in", nx, CollectorOp::Mode::stack});
  g.buffer(1, "delta", "delta_w", nx);
  std::vector<DisseminatorRoute> bc;
  for (int k = 0; k < nu; ++k)
    bc.push_back({arch::actuator_id(k), "delta_in", arch::iota(nx), arch::iota(nx), "delta"});
  g.disseminate(1, "delta", nx, std::move(bc));
  for (int k = 0; k < nu; ++k)
    arch::add_sf_convolving_actuator(net, sys, resp.phi_u, k, arch::iota(nx), 2);
  return net;
}

// No keeper: every sensor sends delta_i straight to the actuators whose
// Phi_u columns touch it; actuators stack and convolve.
inline Network build_naive_distributed_sf(const LtiSystem& sys, const SystemResponseSF& resp) {
  sys.validate();
  arch::require_stable(sys, "build_naive_distributed_sf");
  const int nx = sys.nx(), nu = sys.nu();
  Network net;
  net.input_dim = nx;
  net.output_dim = nu;
  net.senses_output = false;

  std::vector<std::vector<int>> delta_cols(static_cast<size_t>(nu));
  for (int k = 0; k < nu; ++k) delta_cols[static_cast<size_t>(k)] = arch::row_support(resp.phi_u, k);

  for (int i = 0; i < nx; ++i) {
    arch::add_sf_computing_sensor(net, sys, i);
    auto& s = net.node(arch::sensor_id(i));
    s.buffer(0, "delta_i", "delta_i_w", 1);
    std::vector<DisseminatorRoute> routes;
    for (int k = 0; k < nu; ++k) {
      const auto& cols = delta_cols[static_cast<size_t>(k)];
      const auto pos = std::find(cols.begin(), cols.end(), i);
      if (pos == cols.end()) continue;
      routes.push_back({arch::actuator_id(k), "delta_in", {0},
                        {static_cast<int>(pos - cols.begin())}, "delta" + std::to_string(i)});
    }
    if (!routes.empty()) s.disseminate(0, "delta_i", 1, std::move(routes));
  }
  for (int k = 0; k < nu; ++k)
    arch::add_sf_convolving_actuator(net, sys, resp.phi_u, k, delta_cols[static_cast<size_t>(k)], 1);
  return net;
}

// The convolution moves to the sensors: each sensor runs the Phi_u column
// multipliers over its own scalar delta history and ships per-actuator
// partial sums; actuators just add.
inline Network build_memconserv_distributed_sf(const LtiSystem& sys, const SystemResponseSF& resp) {
  sys.validate();
  arch::require_stable(sys, "build_memconserv_distributed_sf");
  const int nx = sys.nx(), nu = sys.nu();
  const int T = resp.phi_u.horizon();
  Network net;
  net.input_dim = nx;
  net.output_dim = nu;
  net.senses_output = false;

  std::vector<std::vector<int>> part_sources(static_cast<size_t>(nu));
  for (int i = 0; i < nx; ++i) {
    arch::add_sf_computing_sensor(net, sys, i);
    auto& s = net.node(arch::sensor_id(i));
    s.buffer(0, "delta0", "delta_i_w", 1);
    const auto taps = arch::delay_line(s, "dchain", "delta0", 1, T - 1);
    const auto rows = arch::col_support(resp.phi_u, i);
    if (rows.empty()) continue;
    std::vector<std::string> partials;
    for (int tau = 1; tau <= T; ++tau) {
      const std::string p = "pc" + std::to_string(tau);
      s.multiply(0, p, taps[static_cast<size_t>(tau - 1)], arch::rows_of(resp.phi_u.tap(tau).col(i), rows));
      partials.push_back(p);
    }
    const int dim = static_cast<int>(rows.size());
    s.add(0, "pout_w", std::move(partials), dim);
    s.buffer(0, "pout", "pout_w", dim);
    std::vector<DisseminatorRoute> routes;
    for (size_t r = 0; r < rows.size(); ++r) {
      routes.push_back({arch::actuator_id(rows[r]), "part_in", {static_cast<int>(r)}, {},
                        "phiu-partial s" + std::to_string(i)});
      part_sources[static_cast<size_t>(rows[r])].push_back(i);
    }
    s.disseminate(0, "pout", dim, std::move(routes));
  }
  for (int k = 0; k < nu; ++k) {
    auto& a = net.add_node(arch::actuator_id(k), "a" + std::to_string(k), NodeRole::actuator, k);
    std::vector<std::string> ins;
    for (int i : part_sources[static_cast<size_t>(k)]) ins.push_back("part_in_" + std::to_string(arch::sensor_id(i)));
    if (!ins.empty()) a.collect(1, {"part_in", "part_in", 1, CollectorOp::Mode::parts});
    a.add(1, "uk_w", std::move(ins), 1);
    a.buffer(1, "u_k", "uk_w", 1);
    a.actuate(1, "u_k", {k});
    arch::add_sf_b_feedback(net, sys, k, 1);
  }
  return net;
}

namespace arch {

inline void check_of_schedulable(const LtiSystem& sys, const SpectralSeries& phi_uy, const char* who) {
  const bool has_feedthrough = !sys.D.isZero(0.0);
  const bool proper_tap = phi_uy.start_tau() == 0 && !phi_uy.at(0).isZero(0.0);
  if (has_feedthrough && proper_tap)
    throw AlgebraicLoopError(std::string(who) +
                             ": D != 0 with a nonzero Phi_uy[0] closes an algebraic loop across nodes; "
                             "use the centralized deployment or a strictly proper Phi_uy");
}

}  // namespace arch

// One controller node running the simplified output-feedback realization.
// Handles D != 0 locally through the prefactored (I + Phi_uy[0] D) solve.
inline Network build_centralized_of(const LtiSystem& sys, const SpectralSeries& phi_uy) {
  sys.validate();
  arch::require_stable(sys, "build_centralized_of");
  detail::require(phi_uy.start_tau() == 0 && phi_uy.rows() == sys.nu() && phi_uy.cols() == sys.ny(),
                  "build_centralized_of: Phi_uy must be nu x ny starting at tau = 0");
  const int nx = sys.nx(), ny = sys.ny(), nu = sys.nu();
  const int T = phi_uy.horizon();
  Network net;
  net.input_dim = ny;
  net.output_dim = nu;
  net.senses_output = true;

  arch::add_relay_sensors(net, ny, "y");
  auto& c = net.add_node(arch::kHubId, "ctrl", NodeRole::controller);
  c.delay("xhat", "xh_next", nx);
  c.collect(1, {"y_w", "hub_in", ny, CollectorOp::Mode::stack});
  c.multiply(1, "cneg", "xhat", -sys.C);
  c.add(1, "w_w", {"y_w", "cneg"}, ny);

  const bool has_feedthrough = !sys.D.isZero(0.0);
  std::vector<std::string> taps;
  if (!has_feedthrough) {
    c.buffer(1, "delta0", "w_w", ny);
    taps = arch::delay_line(c, "dchain", "delta0", ny, T);
    std::vector<std::string> partials;
    for (int tau = 0; tau <= T; ++tau) {
      const std::string p = "p" + std::to_string(tau);
      c.multiply(1, p, taps[static_cast<size_t>(tau)], phi_uy.tap(tau));
      partials.push_back(p);
    }
    c.add(1, "u_w", std::move(partials), nu);
    c.buffer(1, "u", "u_w", nu);
  } else {
    const MatrixXd S = MatrixXd::Identity(nu, nu) + phi_uy.at(0) * sys.D;
    Eigen::FullPivLU<MatrixXd> lu(S);
    if (!lu.isInvertible()) throw AlgebraicLoopError("build_centralized_of: I + Phi_uy[0] D is singular");
    // Past taps hang off delta0, which is only written after u is known.
    c.buffer(2, "delta0", "delta0_w", ny);
    taps = arch::delay_line(c, "dchain", "delta0", ny, T);
    std::vector<std::string> partials;
    for (int tau = 1; tau <= T; ++tau) {
      const std::string p = "p" + std::to_string(tau);
      c.multiply(1, p, taps[static_cast<size_t>(tau)], phi_uy.tap(tau));
      partials.push_back(p);
    }
    c.multiply(1, "f0w", "w_w", phi_uy.at(0));
    partials.push_back("f0w");
    c.add(1, "q_w", std::move(partials), nu);
    c.multiply(1, "u_w", "q_w", lu.inverse());
    c.buffer(1, "u", "u_w", nu);
    c.multiply(2, "du", "u", -sys.D);
    c.add(2, "delta0_w", {"w_w", "du"}, ny);
  }
  c.multiply(1, "axh", "xhat", sys.A);
  c.multiply(1, "bu", "u", sys.B);
  c.add(1, "xh_next_w", {"axh", "bu"}, nx);
  c.buffer(1, "xh_next", "xh_next_w", nx);
  c.disseminate(1, "u", nu, arch::hub_to_actuator_routes(nu, "u"));
  arch::add_relay_actuators(net, nu);
  return net;
}

// Every sensor maintains its own copy of xhat from broadcast B^(*k) u_k
// messages and ships per-actuator Phi_uy partial convolutions.
inline Network build_sensor_side_of(const LtiSystem& sys, const SpectralSeries& phi_uy) {
  sys.validate();
  arch::require_stable(sys, "build_sensor_side_of");
  arch::check_of_schedulable(sys, phi_uy, "build_sensor_side_of");
  const int nx = sys.nx(), ny = sys.ny(), nu = sys.nu();
  const int T = phi_uy.horizon();
  const bool strictly_proper = phi_uy.at(0).isZero(0.0);
  Network net;
  net.input_dim = ny;
  net.output_dim = nu;
  net.senses_output = true;

  std::vector<std::vector<int>> part_sources(static_cast<size_t>(nu));
  for (int i = 0; i < ny; ++i) {
    auto& s = net.add_node(arch::sensor_id(i), "s" + std::to_string(i), NodeRole::sensor, i);
    s.delay("xh_prev", "xh_t_w", nx);
    s.delay("bu_prev", "bu_sum_w", nx);
    s.sense(0, "yi_raw", {i});
    s.buffer(0, "y_i", "yi_raw", 1);
    s.multiply(0, "axh", "xh_prev", sys.A);
    s.add(0, "xh_t_w", {"axh", "bu_prev"}, nx);
    s.multiply(0, "cxh", "xh_t_w", -sys.C.row(i));

    const int delta_stage = strictly_proper && !sys.D.isZero(0.0) ? 2 : 0;
    if (delta_stage == 0) {
      s.add(0, "delta0_w", {"y_i", "cxh"}, 1);
    } else {
      std::vector<std::string> ins{"y_i", "cxh"};
      std::vector<int> dk;
      for (int k = 0; k < nu; ++k)
        if (sys.D(i, k) != 0.0) {
          ins.push_back("d_parts_" + std::to_string(arch::actuator_id(k)));
          dk.push_back(k);
        }
      if (!dk.empty()) s.collect(2, {"d_parts", "d_parts", 1, CollectorOp::Mode::parts});
      s.add(2, "delta0_w", std::move(ins), 1);
    }
    s.buffer(delta_stage, "delta0", "delta0_w", 1);
    const auto taps = arch::delay_line(s, "dchain", "delta0", 1, T);

    const auto rows = arch::col_support(phi_uy, i);
    if (!rows.empty()) {
      std::vector<std::string> partials;
      const int tau_first = strictly_proper ? 1 : 0;
      for (int tau = tau_first; tau <= T; ++tau) {
        const std::string p = "pc" + std::to_string(tau);
        // tap index tau reads delta[t - tau]
        s.multiply(0, p, taps[static_cast<size_t>(tau)], arch::rows_of(phi_uy.tap(tau).col(i), rows));
        partials.push_back(p);
      }
      const int dim = static_cast<int>(rows.size());
      s.add(0, "pout_w", std::move(partials), dim);
      s.buffer(0, "pout", "pout_w", dim);
      std::vector<DisseminatorRoute> routes;
      for (size_t r = 0; r < rows.size(); ++r) {
        routes.push_back({arch::actuator_id(rows[r]), "part_in", {static_cast<int>(r)}, {},
                          "phiuy-partial s" + std::to_string(i)});
        part_sources[static_cast<size_t>(rows[r])].push_back(i);
      }
      s.disseminate(0, "pout", dim, std::move(routes));
    }
    s.collect(2, {"b_parts", "b_parts", nx, CollectorOp::Mode::parts});
    std::vector<std::string> b_ins;
    for (int k = 0; k < nu; ++k)
      if (!sys.B.col(k).isZero(0.0)) b_ins.push_back("b_parts_" + std::to_string(arch::actuator_id(k)));
    s.add(2, "bu_sum_w", std::move(b_ins), nx);
  }

  for (int k = 0; k < nu; ++k) {
    auto& a = net.add_node(arch::actuator_id(k), "a" + std::to_string(k), NodeRole::actuator, k);
    std::vector<std::string> ins;
    for (int i : part_sources[static_cast<size_t>(k)]) ins.push_back("part_in_" + std::to_string(arch::sensor_id(i)));
    if (!ins.empty()) a.collect(1, {"part_in", "part_in", 1, CollectorOp::Mode::parts});
    a.add(1, "uk_w", std::move(ins), 1);
    a.buffer(1, "u_k", "uk_w", 1);
    a.actuate(1, "u_k", {k});
    if (!sys.B.col(k).isZero(0.0)) {
      a.multiply(1, "bcol_w", "u_k", sys.B.col(k));
      a.buffer(1, "bcol", "bcol_w", nx);
      std::vector<DisseminatorRoute> routes;
      for (int i = 0; i < ny; ++i)
        routes.push_back({arch::sensor_id(i), "b_parts", arch::iota(nx), {}, "B(*," + std::to_string(k) + ")u" + std::to_string(k)});
      a.disseminate(1, "bcol", nx, std::move(routes));
    }
    if (!sys.D.isZero(0.0)) {
      a.multiply(1, "dcol_w", "u_k", -sys.D.col(k));
      a.buffer(1, "dcol", "dcol_w", ny);
      std::vector<DisseminatorRoute> routes;
      for (int i = 0; i < ny; ++i)
        if (sys.D(i, k) != 0.0)
          routes.push_back({arch::sensor_id(i), "d_parts", {i}, {}, "-D(" + std::to_string(i) + "," + std::to_string(k) + ")u" + std::to_string(k)});
      if (!routes.empty()) a.disseminate(1, "dcol", ny, std::move(routes));
    }
  }
  return net;
}

// Each actuator keeps the partial state xhat_(k) driven by its own control
// column and sends one summarized message -C^(i*) xhat_(k) - D^(ik) u_k per
// sensor; the partial states telescope to the centralized xhat.
inline Network build_actuator_side_of(const LtiSystem& sys, const SpectralSeries& phi_uy) {
  sys.validate();
  arch::require_stable(sys, "build_actuator_side_of");
  arch::check_of_schedulable(sys, phi_uy, "build_actuator_side_of");
  const int nx = sys.nx(), ny = sys.ny(), nu = sys.nu();
  const int T = phi_uy.horizon();
  const bool strictly_proper = phi_uy.at(0).isZero(0.0);
  // Mode P (any Phi_uy[0], D = 0): actuators summarize at stage 0, sensors
  // convolve at stage 1, actuators assemble u at stage 2. Mode S (strictly
  // proper Phi_uy, any D): sensors ship stored partials at stage 0, actuators
  // form u and summarize at stage 1, sensors close delta at stage 2.
  const bool mode_s = strictly_proper && !sys.D.isZero(0.0);
  const int summarize_stage = mode_s ? 1 : 0;
  const int sensor_stage = mode_s ? 2 : 1;
  const int u_stage = mode_s ? 1 : 2;

  Network net;
  net.input_dim = ny;
  net.output_dim = nu;
  net.senses_output = true;

  std::vector<std::vector<int>> part_sources(static_cast<size_t>(nu));
  std::vector<std::vector<int>> m_targets(static_cast<size_t>(nu));
  for (int k = 0; k < nu; ++k) {
    const auto reach = arch::reach_pattern(sys.A, sys.B.col(k));
    for (int i = 0; i < ny; ++i) {
      bool touches = sys.D(i, k) != 0.0;
      for (int j = 0; j < nx && !touches; ++j) touches = sys.C(i, j) != 0.0 && reach[static_cast<size_t>(j)];
      if (touches) m_targets[static_cast<size_t>(k)].push_back(i);
    }
  }

  for (int i = 0; i < ny; ++i) {
    auto& s = net.add_node(arch::sensor_id(i), "s" + std::to_string(i), NodeRole::sensor, i);
    s.sense(sensor_stage, "yi_raw", {i});
    s.buffer(sensor_stage, "y_i", "yi_raw", 1);
    std::vector<std::string> ins{"y_i"};
    bool any_m = false;
    for (int k = 0; k < nu; ++k) {
      const auto& tgts = m_targets[static_cast<size_t>(k)];
      if (std::find(tgts.begin(), tgts.end(), i) != tgts.end()) {
        ins.push_back("m_parts_" + std::to_string(arch::actuator_id(k)));
        any_m = true;
      }
    }
    if (any_m) s.collect(sensor_stage, {"m_parts", "m_parts", 1, CollectorOp::Mode::parts});
    s.add(sensor_stage, "delta0_w", std::move(ins), 1);
    s.buffer(sensor_stage, "delta0", "delta0_w", 1);
    const auto taps = arch::delay_line(s, "dchain", "delta0", 1, T);

    const auto rows = arch::col_support(phi_uy, i);
    if (rows.empty()) continue;
    const int conv_stage = mode_s ? 0 : sensor_stage;
    std::vector<std::string> partials;
    const int tau_first = strictly_proper ? 1 : 0;
    for (int tau = tau_first; tau <= T; ++tau) {
      const std::string p = "pc" + std::to_string(tau);
      s.multiply(conv_stage, p, taps[static_cast<size_t>(tau)], arch::rows_of(phi_uy.tap(tau).col(i), rows));
      partials.push_back(p);
    }
    const int dim = static_cast<int>(rows.size());
    s.add(conv_stage, "pout_w", std::move(partials), dim);
    s.buffer(conv_stage, "pout", "pout_w", dim);
    std::vector<DisseminatorRoute> routes;
    for (size_t r = 0; r < rows.size(); ++r) {
      routes.push_back({arch::actuator_id(rows[r]), "part_in", {static_cast<int>(r)}, {},
                        "phiuy-partial s" + std::to_string(i)});
      part_sources[static_cast<size_t>(rows[r])].push_back(i);
    }
    s.disseminate(conv_stage, "pout", dim, std::move(routes));
  }

  for (int k = 0; k < nu; ++k) {
    auto& a = net.add_node(arch::actuator_id(k), "a" + std::to_string(k), NodeRole::actuator, k);
    a.delay("xhk", "xhk_next_w", nx);
    std::vector<std::string> ins;
    for (int i : part_sources[static_cast<size_t>(k)]) ins.push_back("part_in_" + std::to_string(arch::sensor_id(i)));
    if (!ins.empty()) a.collect(u_stage, {"part_in", "part_in", 1, CollectorOp::Mode::parts});
    a.add(u_stage, "uk_w", std::move(ins), 1);
    a.buffer(u_stage, "u_k", "uk_w", 1);
    a.actuate(u_stage, "u_k", {k});

    a.multiply(summarize_stage, "cxk_w", "xhk", -sys.C);
    if (mode_s) {
      a.multiply(summarize_stage, "dcol_w", "u_k", -sys.D.col(k));
      a.add(summarize_stage, "mcol_w", {"cxk_w", "dcol_w"}, ny);
    } else {
      a.add(summarize_stage, "mcol_w", {"cxk_w"}, ny);
    }
    a.buffer(summarize_stage, "mcol", "mcol_w", ny);
    std::vector<DisseminatorRoute> routes;
    for (int i : m_targets[static_cast<size_t>(k)])
      routes.push_back({arch::sensor_id(i), "m_parts", {i}, {}, "summary a" + std::to_string(k)});
    if (!routes.empty()) a.disseminate(summarize_stage, "mcol", ny, std::move(routes));

    a.multiply(u_stage, "bk_w", "u_k", sys.B.col(k));
    a.multiply(u_stage, "axk_w", "xhk", sys.A);
    a.add(u_stage, "xhk_next_w", {"axk_w", "bk_w"}, nx);
  }
  return net;
}

// By-analogy construction: the keeper owns xhat and broadcasts delta[t], the
// actuators convolve Phi_uy rows and report u_k back for the next state
// update, so they stay stateless apart from their delta history.
inline Network build_global_state_of(const LtiSystem& sys, const SpectralSeries& phi_uy) {
  sys.validate();
  arch::require_stable(sys, "build_global_state_of");
  arch::check_of_schedulable(sys, phi_uy, "build_global_state_of");
  const int nx = sys.nx(), ny = sys.ny(), nu = sys.nu();
  const int T = phi_uy.horizon();
  const bool strictly_proper = phi_uy.at(0).isZero(0.0);
  const bool mode_s = strictly_proper && !sys.D.isZero(0.0);

  Network net;
  net.input_dim = ny;
  net.output_dim = nu;
  net.senses_output = true;

  arch::add_relay_sensors(net, ny, "y");

  auto& g = net.add_node(arch::kHubId, "gsk", NodeRole::global_state_keeper);
  g.delay("xh_prev", "xh_t_w", nx);
  g.delay("u_prev", "u_stack_w", nu);
  g.collect(1, {"y_w", "hub_in", ny, CollectorOp::Mode::stack});
  g.multiply(1, "axh", "xh_prev", sys.A);
  g.multiply(1, "bu", "u_prev", sys.B);
  g.add(1, "xh_t_w", {"axh", "bu"}, nx);
  g.multiply(1, "cxh", "xh_t_w", -sys.C);
  const int u_collect_stage = mode_s ? 1 : 3;
  g.collect(u_collect_stage, {"u_stack_raw", "u_in", nu, CollectorOp::Mode::stack});
  g.buffer(u_collect_stage, "u_stack_w", "u_stack_raw", nu);
  if (mode_s) {
    g.multiply(1, "dw", "u_stack_w", -sys.D);
    g.add(1, "delta_w", {"y_w", "cxh", "dw"}, ny);
  } else {
    g.add(1, "delta_w", {"y_w", "cxh"}, ny);
  }
  g.buffer(1, "delta", "delta_w", ny);
  std::vector<DisseminatorRoute> bc;
  for (int k = 0; k < nu; ++k)
    bc.push_back({arch::actuator_id(k), "delta_in", arch::iota(ny), arch::iota(ny), "delta"});
  g.disseminate(1, "delta", ny, std::move(bc));

  const int conv_stage = mode_s ? 0 : 2;
  const int delta_stage = 2;
  for (int k = 0; k < nu; ++k) {
    auto& a = net.add_node(arch::actuator_id(k), "a" + std::to_string(k), NodeRole::actuator, k);
    a.collect(delta_stage, {"delta0_w", "delta_in", ny, CollectorOp::Mode::stack});
    a.buffer(delta_stage, "delta0", "delta0_w", ny);
    const auto taps = arch::delay_line(a, "dchain", "delta0", ny, T);
    std::vector<std::string> partials;
    const int tau_first = strictly_proper ? 1 : 0;
    for (int tau = tau_first; tau <= T; ++tau) {
      const std::string p = "p" + std::to_string(tau);
      a.multiply(conv_stage, p, taps[static_cast<size_t>(tau)], phi_uy.tap(tau).row(k));
      partials.push_back(p);
    }
    a.add(conv_stage, "uk_w", std::move(partials), 1);
    a.buffer(conv_stage, "u_k", "uk_w", 1);
    a.actuate(conv_stage, "u_k", {k});
    a.disseminate(conv_stage, "u_k", 1, {{arch::kHubId, "u_in", {0}, {k}, "u" + std::to_string(k)}});
  }
  return net;
}

// Monolithic closed loop around any realization: the gold trace for every
// deployment-equivalence check. The interconnection is well posed without a
// joint plant/controller solve only for D = 0.
inline Trace reference_closed_loop(const LtiSystem& sys, Controller& ctl,
                                   const std::vector<VectorXd>& d_x,
                                   const std::vector<VectorXd>& d_y, int t_sim) {
  sys.validate();
  detail::require(sys.D.isZero(0.0), "reference_closed_loop: closing the loop requires D = 0");
  detail::require(ctl.measurement_dim() == sys.ny() && ctl.control_dim() == sys.nu(),
                  "reference_closed_loop: controller dimensions mismatch");
  Trace tr;
  auto& xs = tr.channel("x", sys.nx());
  auto& us = tr.channel("u", sys.nu());
  auto& ys = tr.channel("y", sys.ny());
  auto& dxs = tr.channel("d_x", sys.nx());
  auto& dys = tr.channel("d_y", sys.ny());
  VectorXd x = VectorXd::Zero(sys.nx());
  for (int t = 0; t < t_sim; ++t) {
    const VectorXd dx = t < static_cast<int>(d_x.size()) ? d_x[static_cast<size_t>(t)] : VectorXd::Zero(sys.nx());
    const VectorXd dy = t < static_cast<int>(d_y.size()) ? d_y[static_cast<size_t>(t)] : VectorXd::Zero(sys.ny());
    const VectorXd y = sys.C * x + dy;
    const VectorXd u = ctl.step(y);
    xs.push(x);
    ys.push(y);
    us.push(u);
    dxs.push(dx);
    dys.push(dy);
    x = plant_step(sys, x, u, dx);
  }
  return tr;
}

// Same loop with the cyber layer in place of the monolithic controller.
inline Trace network_closed_loop(const LtiSystem& sys, Network& net,
                                 const std::vector<VectorXd>& d_x,
                                 const std::vector<VectorXd>& d_y, int t_sim) {
  sys.validate();
  detail::require(sys.D.isZero(0.0), "network_closed_loop: closing the loop requires D = 0");
  const int sensed = net.senses_output ? sys.ny() : sys.nx();
  detail::require(net.input_dim == sensed && net.output_dim == sys.nu(),
                  "network_closed_loop: network dimensions mismatch");
  Trace tr;
  auto& xs = tr.channel("x", sys.nx());
  auto& us = tr.channel("u", sys.nu());
  auto& ys = tr.channel("y", sys.ny());
  auto& dxs = tr.channel("d_x", sys.nx());
  auto& dys = tr.channel("d_y", sys.ny());
  VectorXd x = VectorXd::Zero(sys.nx());
  for (int t = 0; t < t_sim; ++t) {
    const VectorXd dx = t < static_cast<int>(d_x.size()) ? d_x[static_cast<size_t>(t)] : VectorXd::Zero(sys.nx());
    const VectorXd dy = t < static_cast<int>(d_y.size()) ? d_y[static_cast<size_t>(t)] : VectorXd::Zero(sys.ny());
    const VectorXd y = sys.C * x + dy;
    const VectorXd u = net.step(t, net.senses_output ? y : x);
    xs.push(x);
    ys.push(y);
    us.push(u);
    dxs.push(dx);
    dys.push(dy);
    x = plant_step(sys, x, u, dx);
  }
  return tr;
}

}  // namespace sls
