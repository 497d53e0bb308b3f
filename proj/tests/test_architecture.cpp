#include <catch2/catch_amalgamated.hpp>

#include "sls/architecture.hpp"

#include "oracles.hpp"

using namespace sls;
using Catch::Approx;

namespace {

MatrixXd scalar(double v) { return MatrixXd::Constant(1, 1, v); }

LtiSystem chain_plant(int n, double diag = 0.4, double off = 0.2) {
  MatrixXd A = MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    A(i, i) = diag;
    if (i + 1 < n) A(i, i + 1) = A(i + 1, i) = off;
  }
  return LtiSystem::state_feedback_plant(A, MatrixXd::Identity(n, n));
}

LtiSystem chain_of_plant(int n, const std::vector<int>& c_rows) {
  auto sf = chain_plant(n);
  MatrixXd C(static_cast<long>(c_rows.size()), n);
  C.setZero();
  for (size_t r = 0; r < c_rows.size(); ++r) C(static_cast<long>(r), c_rows[r]) = 1.0;
  return LtiSystem::output_feedback_plant(sf.A, sf.B, C, MatrixXd::Zero(static_cast<long>(c_rows.size()), n));
}

std::vector<VectorXd> random_seq(uint64_t seed, int dim, int steps, double scale = 1.0) {
  auto gen = oracle::rng(seed);
  std::vector<VectorXd> out;
  for (int t = 0; t < steps; ++t) out.push_back(oracle::random_vector(gen, dim, scale));
  return out;
}

long messages_at(const Network& net, long t) {
  long n = 0;
  for (const auto& m : net.ledger())
    if (m.t == t) ++n;
  return n;
}

void require_trace_match(const Trace& test, const Trace& ref, double tol) {
  REQUIRE(max_relative_deviation(test.channel("x"), ref.channel("x")) < tol);
  REQUIRE(max_relative_deviation(test.channel("u"), ref.channel("u")) < tol);
}

}  // namespace

TEST_CASE("centralized state-feedback deployment") {
  SECTION("a scalar plant deploys to three nodes exchanging two messages per step") {
    auto sys = LtiSystem::state_feedback_plant(scalar(0.5), scalar(1.0));
    auto res = synth_sf_h2(sys, SynthesisSpec::h2(2, 1, 1));
    auto net = build_centralized_sf(sys, res.response);
    REQUIRE(net.validate_wiring().empty());
    REQUIRE(net.nodes().size() == 3);
    net.step(0, VectorXd::Zero(1));
    REQUIRE(messages_at(net, 0) == 2);
  }

  SECTION("the deployed trace matches the monolithic simplified reference") {
    auto sys = chain_plant(3);
    auto res = synth_sf_h2(sys, SynthesisSpec::h2(4, 3, 3));
    auto d_x = random_seq(101, 3, 40);
    SfSimplifiedController ref_ctl(sys, res.response.phi_u);
    auto ref = reference_closed_loop(sys, ref_ctl, d_x, {}, 50);
    auto net = build_centralized_sf(sys, res.response);
    REQUIRE(net.validate_wiring().empty());
    auto got = network_closed_loop(sys, net, d_x, {}, 50);
    require_trace_match(got, ref, 1e-9);
    REQUIRE(net.cross_step_consumptions() == 0);
  }

  SECTION("zero disturbances move zero payloads but the same message count") {
    auto sys = chain_plant(2);
    auto res = synth_sf_h2(sys, SynthesisSpec::h2(3, 2, 2));
    auto net = build_centralized_sf(sys, res.response);
    for (long t = 0; t < 5; ++t) net.step(t, VectorXd::Zero(2));
    const long quiet = messages_at(net, 4);
    for (const auto& m : net.ledger()) REQUIRE(m.payload.isZero(0.0));
    net.reset();
    auto d_x = random_seq(7, 2, 5);
    VectorXd x = VectorXd::Zero(2);
    for (long t = 0; t < 5; ++t) x = plant_step(sys, x, net.step(t, x), d_x[static_cast<size_t>(t)]);
    REQUIRE(messages_at(net, 4) == quiet);
  }

  SECTION("unstable plants are rejected") {
    auto sys = LtiSystem::state_feedback_plant(scalar(1.1), scalar(1.0));
    SystemResponseSF resp{SpectralSeries::zeros(1, 2, 1, 1), SpectralSeries::zeros(1, 2, 1, 1)};
    REQUIRE_THROWS_AS(build_centralized_sf(sys, resp), std::domain_error);
  }
}

TEST_CASE("original state-feedback deployment") {
  auto sys = chain_plant(3);
  auto res = synth_sf_h2(sys, SynthesisSpec::h2(5, 3, 3));

  SECTION("zero input leaves the network silent") {
    auto net = build_original_sf(sys, res.response);
    REQUIRE(net.validate_wiring().empty());
    for (long t = 0; t < 6; ++t) REQUIRE(net.step(t, VectorXd::Zero(3)).isZero(0.0));
  }

  SECTION("trace equivalence against the standard monolithic realization") {
    auto d_x = random_seq(103, 3, 40);
    SfStandardController ref_ctl(res.response);
    auto ref = reference_closed_loop(sys, ref_ctl, d_x, {}, 50);
    auto net = build_original_sf(sys, res.response);
    auto got = network_closed_loop(sys, net, d_x, {}, 50);
    require_trace_match(got, ref, 1e-9);
  }

  SECTION("costs more flops than the one-convolution deployment when N_x >= N_u, N_x >= 2, T > 3") {
    auto tall = chain_plant(3);
    MatrixXd B(3, 1);
    B << 1.0, 0.5, 0.25;
    auto sys_tall = LtiSystem::state_feedback_plant(tall.A, B);
    auto r = synth_sf_h2(sys_tall, SynthesisSpec::h2(5, 3, 1));
    auto original = build_original_sf(sys_tall, r.response);
    auto central = build_centralized_sf(sys_tall, r.response);
    REQUIRE(original.flops_per_step() > central.flops_per_step());
  }
}

TEST_CASE("global-state state-feedback deployment") {
  auto sys = chain_plant(3);
  auto res = synth_sf_h2(sys, SynthesisSpec::h2(4, 3, 3));
  auto net = build_global_state_sf(sys, res.response);
  REQUIRE(net.validate_wiring().empty());

  SECTION("sensor-to-sensor traffic follows the off-diagonal support of A") {
    net.step(0, VectorXd::Zero(3));
    long ss = 0;
    for (const auto& m : net.ledger()) {
      const auto& src = net.node(m.source);
      const auto& dst = net.node(m.target);
      if (src.role == NodeRole::sensor && dst.role == NodeRole::sensor) {
        ++ss;
        REQUIRE(sys.A(dst.site, src.site) != 0.0);
        REQUIRE(src.site != dst.site);
      }
    }
    REQUIRE(ss == 4);  // tridiagonal: two off-diagonal entries per interior link
  }

  SECTION("trace equivalence to the monolithic reference") {
    auto d_x = random_seq(107, 3, 60);
    SfSimplifiedController ref_ctl(sys, res.response.phi_u);
    auto ref = reference_closed_loop(sys, ref_ctl, d_x, {}, 60);
    auto got = network_closed_loop(sys, net, d_x, {}, 60);
    require_trace_match(got, ref, 1e-9);
    REQUIRE(net.cross_step_consumptions() == 0);
  }

  SECTION("failing the keeper freezes every actuator") {
    auto quiet = std::vector<VectorXd>(10, VectorXd::Zero(3));
    auto d_x = quiet;
    auto late = random_seq(109, 3, 30);
    d_x.insert(d_x.end(), late.begin(), late.end());
    net.reset();
    net.fail_node(arch::kHubId);
    VectorXd x = VectorXd::Zero(3);
    for (long t = 0; t < 40; ++t) {
      const VectorXd u = net.step(t, x);
      REQUIRE(u.isZero(0.0));
      x = plant_step(sys, x, u, d_x[static_cast<size_t>(t)]);
      REQUIRE(x.allFinite());
    }
  }
}

TEST_CASE("naive distributed state-feedback deployment") {
  auto sys = chain_plant(3);
  auto res = synth_sf_h2(sys, SynthesisSpec::h2(4, 3, 3));
  auto net = build_naive_distributed_sf(sys, res.response);
  REQUIRE(net.validate_wiring().empty());

  SECTION("dense responses ship every delta to every actuator") {
    net.step(0, VectorXd::Zero(3));
    long sa = 0;
    for (const auto& m : net.ledger()) {
      if (net.node(m.source).role == NodeRole::sensor && net.node(m.target).role == NodeRole::actuator) ++sa;
    }
    REQUIRE(sa == 9);  // N_x * N_u for a dense Phi_u
  }

  SECTION("zero input stays zero") {
    for (long t = 0; t < 5; ++t) REQUIRE(net.step(t, VectorXd::Zero(3)).isZero(0.0));
  }

  SECTION("trace equivalence to the monolithic reference") {
    auto d_x = random_seq(113, 3, 60);
    SfSimplifiedController ref_ctl(sys, res.response.phi_u);
    auto ref = reference_closed_loop(sys, ref_ctl, d_x, {}, 60);
    auto got = network_closed_loop(sys, net, d_x, {}, 60);
    require_trace_match(got, ref, 1e-9);
  }
}

TEST_CASE("memory-conservative distributed state-feedback deployment") {
  SECTION("buffer savings against the naive deployment follow (T-1) N_x (N_u - 1)") {
    for (auto [nx, nu, T] : {std::tuple<int, int, int>{2, 1, 4}, {2, 2, 5}, {3, 2, 6}}) {
      auto gen = oracle::rng(1000 + static_cast<uint64_t>(nx * nu * T));
      auto A = oracle::random_stable_matrix(gen, nx, 0.6);
      MatrixXd B = oracle::random_matrix(gen, nx, nu);
      B.array() += 2.0;  // dense, nonzero
      auto sys = LtiSystem::state_feedback_plant(A, B);
      // dense response: fill with nonzeros, no synthesis needed for counting
      SystemResponseSF resp;
      resp.phi_x = SpectralSeries::zeros(1, T, nx, nx);
      resp.phi_u = SpectralSeries::zeros(1, T, nu, nx);
      for (int tau = 1; tau <= T; ++tau)
        resp.phi_u.set(tau, MatrixXd::Constant(nu, nx, 0.1 / tau));
      auto naive = build_naive_distributed_sf(sys, resp);
      auto conservative = build_memconserv_distributed_sf(sys, resp);
      REQUIRE(naive.buffer_scalars() - conservative.buffer_scalars() ==
              static_cast<long long>(T - 1) * nx * (nu - 1));
      REQUIRE(naive.multiplier_scalars() == conservative.multiplier_scalars());
    }
  }

  SECTION("trace equivalence to the monolithic reference") {
    auto sys = chain_plant(3);
    auto res = synth_sf_h2(sys, SynthesisSpec::h2(4, 3, 3));
    auto net = build_memconserv_distributed_sf(sys, res.response);
    REQUIRE(net.validate_wiring().empty());
    auto d_x = random_seq(127, 3, 60);
    SfSimplifiedController ref_ctl(sys, res.response.phi_u);
    auto ref = reference_closed_loop(sys, ref_ctl, d_x, {}, 60);
    auto got = network_closed_loop(sys, net, d_x, {}, 60);
    require_trace_match(got, ref, 1e-9);
  }

  SECTION("a failed sensor leaves the other nodes running with finite outputs") {
    auto sys = chain_plant(3);
    auto res = synth_sf_h2(sys, SynthesisSpec::h2(4, 3, 3));
    auto net = build_memconserv_distributed_sf(sys, res.response);
    net.fail_node(arch::sensor_id(0));
    auto d_x = random_seq(131, 3, 100);
    VectorXd x = VectorXd::Zero(3);
    for (long t = 0; t < 100; ++t) {
      const VectorXd u = net.step(t, x);
      REQUIRE(u.allFinite());
      x = plant_step(sys, x, u, d_x[static_cast<size_t>(t)]);
      REQUIRE(x.allFinite());
      REQUIRE(x.cwiseAbs().maxCoeff() < 1e3);
    }
  }
}

TEST_CASE("communication localization stays inside the structural supports") {
  const int n = 5;
  auto sys = chain_plant(n);
  auto spec = SynthesisSpec::h2(6, n, n);
  spec.pattern = SparsityPattern::banded_sf(n, n, 1);
  auto res = synth_sf_h2(sys, spec);

  for (int which = 0; which < 2; ++which) {
    auto net = which == 0 ? build_naive_distributed_sf(sys, res.response)
                          : build_memconserv_distributed_sf(sys, res.response);
    REQUIRE(net.validate_wiring().empty());
    auto d_x = random_seq(137, n, 100);
    VectorXd x = VectorXd::Zero(n);
    for (long t = 0; t < 100; ++t) x = plant_step(sys, x, net.step(t, x), d_x[static_cast<size_t>(t)]);
    REQUIRE_FALSE(net.ledger().empty());
    for (const auto& m : net.ledger()) {
      const int ssite = net.node(m.source).site;
      const int dsite = net.node(m.target).site;
      REQUIRE(ssite >= 0);
      REQUIRE(dsite >= 0);
      REQUIRE(std::abs(ssite - dsite) <= 1);  // bandwidth-1 closure on the chain
    }
  }
}

TEST_CASE("centralized output-feedback deployment") {
  auto sys = chain_of_plant(3, {0, 2});

  SECTION("a zero parameter keeps the loop quiet") {
    auto net = build_centralized_of(sys, SpectralSeries::zeros(0, 4, 3, 2));
    REQUIRE(net.validate_wiring().empty());
    for (long t = 0; t < 5; ++t) REQUIRE(net.step(t, VectorXd::Zero(2)).isZero(0.0));
  }

  SECTION("message count is N_y + N_u per step") {
    auto net = build_centralized_of(sys, SpectralSeries::zeros(0, 4, 3, 2));
    net.step(0, VectorXd::Zero(2));
    REQUIRE(messages_at(net, 0) == 2 + 3);
  }

  SECTION("trace equivalence to the monolithic simplified reference") {
    ClosedLoopWeights w;
    w.w_xx = 1.0;
    w.w_ux = 0.2;
    auto phi_uy = synth_of_youla(sys, SynthesisSpec::h2(4, 3, 3), w);
    auto net = build_centralized_of(sys, phi_uy);
    REQUIRE(net.validate_wiring().empty());
    auto d_x = random_seq(139, 3, 60);
    auto d_y = random_seq(149, 2, 60, 0.3);
    OfSimplifiedController ref_ctl(sys, phi_uy);
    auto ref = reference_closed_loop(sys, ref_ctl, d_x, d_y, 60);
    auto got = network_closed_loop(sys, net, d_x, d_y, 60);
    require_trace_match(got, ref, 1e-9);
    REQUIRE(net.cross_step_consumptions() == 0);
  }
}

TEST_CASE("sensor-side distributed output-feedback deployment") {
  auto sys = chain_of_plant(3, {0, 2});
  ClosedLoopWeights w;
  w.w_xx = 1.0;
  w.w_ux = 0.2;
  auto phi_uy = synth_of_youla(sys, SynthesisSpec::h2(4, 3, 3), w);

  SECTION("trace equivalence and a consistent shared state estimate") {
    auto net = build_sensor_side_of(sys, phi_uy);
    REQUIRE(net.validate_wiring().empty());
    auto d_x = random_seq(151, 3, 50);
    auto d_y = random_seq(157, 2, 50, 0.3);
    OfSimplifiedController ref_ctl(sys, phi_uy);
    auto ref = reference_closed_loop(sys, ref_ctl, d_x, d_y, 50);
    auto got = network_closed_loop(sys, net, d_x, d_y, 50);
    require_trace_match(got, ref, 1e-9);
    // after the run, both sensors hold the same copy of xhat
    const VectorXd xh0 = net.read_node_var(arch::sensor_id(0), "xh_t_w", 3);
    const VectorXd xh1 = net.read_node_var(arch::sensor_id(1), "xh_t_w", 3);
    REQUIRE((xh0 - xh1).cwiseAbs().maxCoeff() < 1e-12);
  }

  SECTION("dense feedthrough doubles the actuator-to-sensor message kinds") {
    // strictly proper parameter so the D-messages stay causal
    auto dense = chain_of_plant(3, {0, 2});
    dense.D = MatrixXd::Constant(2, 3, 0.1);
    SpectralSeries strictly_proper = SpectralSeries::zeros(0, 4, 3, 2);
    strictly_proper.set(1, MatrixXd::Constant(3, 2, 0.2));
    strictly_proper.set(2, MatrixXd::Constant(3, 2, -0.1));
    auto net = build_sensor_side_of(dense, strictly_proper);
    REQUIRE(net.validate_wiring().empty());
    net.step(0, VectorXd::Zero(2));
    long a2s = 0;
    for (const auto& m : net.ledger())
      if (net.node(m.source).role == NodeRole::actuator && net.node(m.target).role == NodeRole::sensor) ++a2s;
    REQUIRE(a2s == 2 * 3 * 2);  // two kinds, N_u * N_y each
  }

  SECTION("feedthrough with a proper parameter is refused") {
    auto dense = chain_of_plant(3, {0, 2});
    dense.D = MatrixXd::Constant(2, 3, 0.1);
    SpectralSeries proper = SpectralSeries::zeros(0, 3, 3, 2);
    proper.set(0, MatrixXd::Constant(3, 2, 0.5));
    REQUIRE_THROWS_AS(build_sensor_side_of(dense, proper), AlgebraicLoopError);
  }
}

TEST_CASE("actuator-side distributed output-feedback deployment") {
  auto sys = chain_of_plant(3, {0, 2});
  ClosedLoopWeights w;
  w.w_xx = 1.0;
  w.w_ux = 0.2;
  auto phi_uy = synth_of_youla(sys, SynthesisSpec::h2(4, 3, 3), w);

  SECTION("one summarized message per actuator-sensor pair") {
    auto net = build_actuator_side_of(sys, phi_uy);
    REQUIRE(net.validate_wiring().empty());
    net.step(0, VectorXd::Zero(2));
    long a2s = 0;
    for (const auto& m : net.ledger())
      if (net.node(m.source).role == NodeRole::actuator && net.node(m.target).role == NodeRole::sensor) ++a2s;
    REQUIRE(a2s == 3 * 2);  // N_u * N_y, half of the sensor-side load
  }

  SECTION("trace equivalence and telescoping partial states") {
    auto net = build_actuator_side_of(sys, phi_uy);
    auto central = build_centralized_of(sys, phi_uy);
    OfSimplifiedController ref_ctl(sys, phi_uy);
    auto d_x = random_seq(163, 3, 50);
    auto d_y = random_seq(167, 2, 50, 0.3);
    auto ref = reference_closed_loop(sys, ref_ctl, d_x, d_y, 50);

    Trace got;
    auto& xs = got.channel("x", 3);
    auto& us = got.channel("u", 3);
    VectorXd x_a = VectorXd::Zero(3), x_c = VectorXd::Zero(3);
    for (long t = 0; t < 50; ++t) {
      const VectorXd y_a = sys.C * x_a + d_y[static_cast<size_t>(t)];
      const VectorXd y_c = sys.C * x_c + d_y[static_cast<size_t>(t)];
      const VectorXd u_a = net.step(t, y_a);
      const VectorXd u_c = central.step(t, y_c);
      xs.push(x_a);
      us.push(u_a);
      VectorXd sum_xhk = VectorXd::Zero(3);
      for (int k = 0; k < 3; ++k) sum_xhk += net.read_node_var(arch::actuator_id(k), "xhk", 3);
      const VectorXd xh_central = central.read_node_var(arch::kHubId, "xhat", 3);
      REQUIRE((sum_xhk - xh_central).cwiseAbs().maxCoeff() < 1e-10);
      x_a = plant_step(sys, x_a, u_a, d_x[static_cast<size_t>(t)]);
      x_c = plant_step(sys, x_c, u_c, d_x[static_cast<size_t>(t)]);
    }
    require_trace_match(got, ref, 1e-9);
  }
}

TEST_CASE("global-state output-feedback deployment") {
  auto sys = chain_of_plant(3, {0, 2});

  SECTION("zero parameter, zero control") {
    auto net = build_global_state_of(sys, SpectralSeries::zeros(0, 4, 3, 2));
    REQUIRE(net.validate_wiring().empty());
    for (long t = 0; t < 5; ++t) REQUIRE(net.step(t, VectorXd::Zero(2)).isZero(0.0));
  }

  SECTION("trace equivalence and keeper failure semantics") {
    ClosedLoopWeights w;
    w.w_xx = 1.0;
    w.w_ux = 0.2;
    auto phi_uy = synth_of_youla(sys, SynthesisSpec::h2(4, 3, 3), w);
    auto net = build_global_state_of(sys, phi_uy);
    REQUIRE(net.validate_wiring().empty());
    auto d_x = random_seq(173, 3, 50);
    auto d_y = random_seq(179, 2, 50, 0.3);
    OfSimplifiedController ref_ctl(sys, phi_uy);
    auto ref = reference_closed_loop(sys, ref_ctl, d_x, d_y, 50);
    auto got = network_closed_loop(sys, net, d_x, d_y, 50);
    require_trace_match(got, ref, 1e-9);

    net.reset();
    net.fail_node(arch::kHubId);
    VectorXd x = VectorXd::Zero(3);
    for (long t = 0; t < 30; ++t) {
      const VectorXd u = net.step(t, sys.C * x + d_y[static_cast<size_t>(t)]);
      REQUIRE(u.isZero(0.0));  // quiescent history, dead keeper: no delta ever reaches the actuators
      x = plant_step(sys, x, u, d_x[static_cast<size_t>(t)]);
    }
  }
}
