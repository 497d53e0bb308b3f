#include <catch2/catch_amalgamated.hpp>

#include "sls/eqls.hpp"
#include "sls/synthesis.hpp"

#include "oracles.hpp"

using namespace sls;
using Catch::Approx;

namespace {

MatrixXd scalar(double v) { return MatrixXd::Constant(1, 1, v); }

LtiSystem scalar_plant(double a, double b) {
  return LtiSystem::state_feedback_plant(scalar(a), scalar(b));
}

}  // namespace

TEST_CASE("state-feedback H2 synthesis on a deadbeat plant") {
  const int nx = 3;
  auto sys = LtiSystem::state_feedback_plant(MatrixXd::Zero(nx, nx), MatrixXd::Identity(nx, nx));
  auto res = synth_sf_h2(sys, SynthesisSpec::h2(1, nx, nx));
  REQUIRE(res.response.phi_x.at(1).isIdentity(1e-12));
  REQUIRE(res.response.phi_u.at(1).isZero(1e-12));
  REQUIRE(res.objective == Approx(static_cast<double>(nx)).margin(1e-10));
}

TEST_CASE("scalar T=2 state-feedback synthesis matches the one-variable oracle") {
  auto sys = scalar_plant(0.5, 1.0);
  auto res = synth_sf_h2(sys, SynthesisSpec::h2(2, 1, 1));

  // Constraint elimination leaves one decision a = Phi_u[1]:
  // Phi_x[2] = 0.5 + a, Phi_u[2] = -0.5 (0.5 + a), objective 1 + 1.25(0.5+a)^2 + a^2.
  auto cost = [](const Eigen::VectorXd& v) {
    const double a = v(0);
    return 1.0 + 1.25 * (0.5 + a) * (0.5 + a) + a * a;
  };
  const double a_grid = oracle::grid_minimize(cost, Eigen::VectorXd::Zero(1), 1.0)(0);
  const double a_quad = -1.25 * 0.5 / (1.25 + 1.0);
  REQUIRE(a_grid == Approx(-5.0 / 18.0).margin(1e-6));
  REQUIRE(a_quad == Approx(-5.0 / 18.0).margin(1e-15));

  REQUIRE(res.response.phi_x.at(1)(0, 0) == Approx(1.0).margin(1e-12));
  REQUIRE(res.response.phi_u.at(1)(0, 0) == Approx(-5.0 / 18.0).margin(1e-9));
  REQUIRE(res.response.phi_x.at(2)(0, 0) == Approx(2.0 / 9.0).margin(1e-9));
  REQUIRE(res.response.phi_u.at(2)(0, 0) == Approx(-1.0 / 9.0).margin(1e-9));
  REQUIRE(res.objective == Approx(41.0 / 36.0).margin(1e-9));
  REQUIRE(res.kkt_gradient_norm < 1e-8);
}

TEST_CASE("any feasible output has an exact identity first tap") {
  auto gen = oracle::rng(31);
  for (int rep = 0; rep < 4; ++rep) {
    const int nx = 3, nu = 2;
    auto sys = LtiSystem::state_feedback_plant(oracle::random_stable_matrix(gen, nx, 0.7),
                                               oracle::random_matrix(gen, nx, nu) + 2.0 * MatrixXd::Identity(nx, nu));
    auto res = synth_sf_h2(sys, SynthesisSpec::h2(4, nx, nu));
    REQUIRE((res.response.phi_x.at(1) - MatrixXd::Identity(nx, nx)).cwiseAbs().maxCoeff() < 1e-10);
    REQUIRE(validate_sf_achievability(res.response, sys).within(1e-9));
    REQUIRE(res.kkt_gradient_norm < 1e-8);
  }
}

TEST_CASE("achievability validator pinpoints residual families") {
  auto sys = scalar_plant(0.5, 1.0);
  auto res = synth_sf_h2(sys, SynthesisSpec::h2(3, 1, 1));

  SECTION("synthesized responses validate cleanly") {
    REQUIRE(validate_sf_achievability(res.response, sys).within(1e-9));
  }
  SECTION("a scaled first tap is reported on the first block") {
    auto bad = res.response;
    bad.phi_x.set(1, scalar(2.0));
    REQUIRE(validate_sf_achievability(bad, sys).first_tap == Approx(1.0));
  }
  SECTION("recursion residual scales linearly with a tap perturbation") {
    auto base = res.response;
    auto perturbed = [&](double eps) {
      auto r = base;
      r.phi_u.set(1, r.phi_u.at(1) + scalar(eps));
      return validate_sf_achievability(r, sys).recursion;
    };
    const double r1 = perturbed(1e-4), r2 = perturbed(2e-4);
    REQUIRE(r2 == Approx(2.0 * r1).epsilon(1e-6));
  }
}

TEST_CASE("hard terminal infeasibility is reported with the violated constraint") {
  auto sys = scalar_plant(0.5, 0.0);  // no actuation, FIR deadline unreachable
  try {
    synth_sf_h2(sys, SynthesisSpec::h2(2, 1, 1));
    FAIL("expected InfeasibleSynthesis");
  } catch (const InfeasibleSynthesis& e) {
    REQUIRE_THAT(e.constraint(), Catch::Matchers::ContainsSubstring("terminal"));
    REQUIRE(e.residual() > 1e-3);
  }

  SECTION("soft mode on the same plant reports the terminal residual instead") {
    auto spec = SynthesisSpec::h2(2, 1, 1);
    spec.terminal = SynthesisSpec::Terminal::soft;
    spec.soft_penalty = 10.0;
    auto res = synth_sf_h2(sys, spec);
    REQUIRE(res.terminal_residual > 1e-3);
    REQUIRE(validate_sf_achievability(res.response, sys).recursion < 1e-10);
  }
}

TEST_CASE("enlarging the horizon never increases the optimum") {
  auto gen = oracle::rng(77);
  for (int rep = 0; rep < 3; ++rep) {
    const int nx = 3;
    auto sys = LtiSystem::state_feedback_plant(oracle::random_stable_matrix(gen, nx, 0.8),
                                               MatrixXd::Identity(nx, nx));
    double prev = std::numeric_limits<double>::infinity();
    for (int T = 2; T <= 5; ++T) {
      const double obj = synth_sf_h2(sys, SynthesisSpec::h2(T, nx, nx)).objective;
      REQUIRE(obj <= prev + 1e-9);
      prev = obj;
    }
  }
}

TEST_CASE("sparsity masks produce exact structural zeros") {
  const int n = 5;
  MatrixXd A = MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    A(i, i) = 0.4;
    if (i + 1 < n) A(i, i + 1) = A(i + 1, i) = 0.2;
  }
  auto sys = LtiSystem::state_feedback_plant(A, MatrixXd::Identity(n, n));
  auto spec = SynthesisSpec::h2(4, n, n);
  spec.pattern = SparsityPattern::banded_sf(n, n, 1);
  auto res = synth_sf_h2(sys, spec);

  for (int tau = 1; tau <= 4; ++tau)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (std::abs(i - j) > 1) {
          REQUIRE(res.response.phi_x.at(tau)(i, j) == 0.0);
          REQUIRE(res.response.phi_u.at(tau)(i, j) == 0.0);
        }
  REQUIRE(validate_sf_achievability(res.response, sys).within(1e-9));

  SECTION("masking the identity diagonal is rejected up front") {
    auto bad = SynthesisSpec::h2(3, n, n);
    SparsityPattern p;
    MaskMatrix m = SparsityPattern::band(n, n, 1);
    m(2, 2) = false;
    p.phi_x = MaskSeries{1, {m}};
    bad.pattern = p;
    REQUIRE_THROWS_AS(synth_sf_h2(sys, bad), InfeasibleSynthesis);
  }
}

TEST_CASE("per-column solves equal the stacked program") {
  const int nx = 3, nu = 2, T = 3;
  auto gen = oracle::rng(41);
  auto sys = LtiSystem::state_feedback_plant(oracle::random_stable_matrix(gen, nx, 0.8),
                                             oracle::random_matrix(gen, nx, nu) + MatrixXd::Identity(nx, nu));
  auto res = synth_sf_h2(sys, SynthesisSpec::h2(T, nx, nu));

  // Independent stacked assembly over all columns at once.
  const int per_col = T * (nx + nu);
  const int nvars = per_col * nx;
  auto vx = [&](int j, int tau, int i) { return j * per_col + (tau - 1) * (nx + nu) + i; };
  auto vu = [&](int j, int tau, int k) { return j * per_col + (tau - 1) * (nx + nu) + nx + k; };
  MatrixXd H = MatrixXd::Zero(nvars, nvars);
  for (int j = 0; j < nx; ++j)
    for (int tau = 1; tau <= T; ++tau) {
      for (int i = 0; i < nx; ++i) H(vx(j, tau, i), vx(j, tau, i)) += 1.0;
      for (int k = 0; k < nu; ++k) H(vu(j, tau, k), vu(j, tau, k)) += 1.0;
    }
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> rhs;
  for (int j = 0; j < nx; ++j) {
    for (int i = 0; i < nx; ++i) {
      Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(nvars);
      r(vx(j, 1, i)) = 1.0;
      rows.push_back(r);
      rhs.push_back(i == j ? 1.0 : 0.0);
    }
    for (int tau = 1; tau < T; ++tau)
      for (int i = 0; i < nx; ++i) {
        Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(nvars);
        r(vx(j, tau + 1, i)) = 1.0;
        for (int l = 0; l < nx; ++l) r(vx(j, tau, l)) -= sys.A(i, l);
        for (int k = 0; k < nu; ++k) r(vu(j, tau, k)) -= sys.B(i, k);
        rows.push_back(r);
        rhs.push_back(0.0);
      }
    for (int i = 0; i < nx; ++i) {
      Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(nvars);
      for (int l = 0; l < nx; ++l) r(vx(j, T, l)) += sys.A(i, l);
      for (int k = 0; k < nu; ++k) r(vu(j, T, k)) += sys.B(i, k);
      rows.push_back(r);
      rhs.push_back(0.0);
    }
  }
  MatrixXd E(static_cast<long>(rows.size()), nvars);
  VectorXd d(static_cast<long>(rows.size()));
  for (size_t r = 0; r < rows.size(); ++r) {
    E.row(static_cast<long>(r)) = rows[r];
    d(static_cast<long>(r)) = rhs[r];
  }
  auto sol = solve_equality_ls(H, VectorXd::Zero(nvars), E, d);
  REQUIRE(sol.constraint_residual < 1e-10);

  for (int j = 0; j < nx; ++j)
    for (int tau = 1; tau <= T; ++tau) {
      for (int i = 0; i < nx; ++i)
        REQUIRE(res.response.phi_x.at(tau)(i, j) == Approx(sol.v(vx(j, tau, i))).margin(1e-9));
      for (int k = 0; k < nu; ++k)
        REQUIRE(res.response.phi_u.at(tau)(k, j) == Approx(sol.v(vu(j, tau, k))).margin(1e-9));
    }
}

TEST_CASE("output-feedback quadruple program") {
  SECTION("first tap of the state response is the identity") {
    auto gen = oracle::rng(53);
    MatrixXd C(2, 3);
    C << 1, 0, 0, 0, 0, 1;
    auto sys = LtiSystem::output_feedback_plant(oracle::random_stable_matrix(gen, 3, 0.7),
                                                oracle::random_matrix(gen, 3, 2) + MatrixXd::Identity(3, 2),
                                                C, MatrixXd::Zero(2, 2));
    auto spec = SynthesisSpec::h2(3, 3, 2);
    auto res = synth_of_h2_quadruple(sys, spec);
    REQUIRE(res.response.phi_xx.at(1).isIdentity(1e-9));
    auto rep = validate_of_achievability(res.response, sys);
    REQUIRE(rep.interior < 1e-9);
    REQUIRE(rep.boundary < 1e-9);
    REQUIRE(res.response.phi_xx.start_tau() == 1);
    REQUIRE(res.response.phi_uy.start_tau() == 0);
  }

  SECTION("state-feedback solution is embedded when the measurement channels carry no weight") {
    const int nx = 3;
    auto gen = oracle::rng(59);
    auto A = oracle::random_stable_matrix(gen, nx, 0.7);
    auto B = MatrixXd::Identity(nx, nx);
    auto sf_sys = LtiSystem::state_feedback_plant(A, B);
    auto sf = synth_sf_h2(sf_sys, SynthesisSpec::h2(3, nx, nx));

    auto spec = SynthesisSpec::h2(3, nx, nx);
    spec.w_xy = 0.0;
    spec.w_uy = 0.0;
    auto of = synth_of_h2_quadruple(sf_sys, spec);

    for (int tau = 1; tau <= 3; ++tau) {
      REQUIRE((of.response.phi_xx.at(tau) - sf.response.phi_x.at(tau)).cwiseAbs().maxCoeff() < 1e-8);
      REQUIRE((of.response.phi_ux.at(tau) - sf.response.phi_u.at(tau)).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
}

TEST_CASE("Youla-route synthesis for stable plants") {
  SECTION("pure parameter penalty returns the open-loop controller") {
    auto sys = scalar_plant(0.5, 1.0);
    ClosedLoopWeights w;
    w.w_xx = 0.0;
    w.w_uy = 1.0;
    auto phi_uy = synth_of_youla(sys, SynthesisSpec::h2(2, 1, 1), w);
    REQUIRE(phi_uy.start_tau() == 0);
    REQUIRE(phi_uy.max_abs() < 1e-12);
  }

  SECTION("scalar taps match a brute-force grid search") {
    auto sys = scalar_plant(0.5, 1.0);
    const int T = 2, H = 30;
    ClosedLoopWeights w;
    w.w_xx = 1.0;
    w.w_ux = 0.1;
    w.eval_horizon = H;
    auto phi_uy = synth_of_youla(sys, SynthesisSpec::h2(T, 1, 1), w);

    auto objective = [&](const Eigen::VectorXd& f) {
      // Direct scalar convolutions of Phi_xx = Delta + Delta B f C Delta and
      // Phi_ux = f C Delta, truncated at H.
      std::vector<double> delta(H + 1, 0.0);
      for (int tau = 1; tau <= H; ++tau) delta[tau] = std::pow(0.5, tau - 1);
      double obj = 0.0;
      for (int tau = 1; tau <= H; ++tau) {
        double ux = 0.0;
        for (int s = 0; s <= T && s < tau; ++s) ux += f(s) * delta[tau - s];
        double xx = delta[tau];
        for (int s = 0; s <= T; ++s)
          for (int a = 1; a <= tau - s - 1; ++a) xx += delta[a] * f(s) * delta[tau - s - a];
        obj += xx * xx + 0.1 * ux * ux;
      }
      return obj;
    };
    Eigen::VectorXd f_star = oracle::grid_minimize_joint(objective, Eigen::VectorXd::Zero(3), 1.0);
    for (int s = 0; s <= T; ++s)
      REQUIRE(phi_uy.at(s)(0, 0) == Approx(f_star(s)).margin(1e-6));
  }

  SECTION("unstable plants are rejected") {
    auto sys = scalar_plant(1.2, 1.0);
    REQUIRE_THROWS_AS(synth_of_youla(sys, SynthesisSpec::h2(2, 1, 1), ClosedLoopWeights{}), std::domain_error);
  }
}

TEST_CASE("quadruple_from_phiuy") {
  SECTION("zero parameter gives the open-loop response") {
    auto gen = oracle::rng(61);
    MatrixXd A = oracle::random_stable_matrix(gen, 3, 0.6);
    auto sys = LtiSystem::state_feedback_plant(A, MatrixXd::Identity(3, 3));
    auto quad = quadruple_from_phiuy(sys, SpectralSeries::zeros(0, 3, 3, 3), 20);
    auto res = truncated_resolvent(A, 20);
    for (int tau = 1; tau <= 20; ++tau)
      REQUIRE((quad.phi_xx.at(tau) - res.series.at(tau)).cwiseAbs().maxCoeff() < 1e-13);
    REQUIRE(quad.phi_ux.max_abs() == 0.0);
    REQUIRE(quad.truncated);
  }

  SECTION("achievability residuals are pure truncation artifacts") {
    auto sys = scalar_plant(0.8, 1.0);
    SpectralSeries phi_uy(0, {scalar(0.3), scalar(-0.2), scalar(0.1)});
    auto near = quadruple_from_phiuy(sys, phi_uy, 24);
    auto far = quadruple_from_phiuy(sys, phi_uy, 48);
    auto rep_near = validate_of_achievability(near, sys);
    auto rep_far = validate_of_achievability(far, sys);
    // Interior coefficients are exact; only the final coefficient feels the
    // dropped resolvent tail, so it shrinks along with the tail bound.
    REQUIRE(rep_near.interior < 1e-12);
    REQUIRE(rep_far.interior < 1e-12);
    REQUIRE(far.tail_norm < near.tail_norm / 100.0);
    REQUIRE(rep_far.boundary < rep_near.boundary / 100.0);
    REQUIRE(rep_far.boundary < 1e-3);
  }

  SECTION("agrees with the quadruple program when the parameter space coincides") {
    // Deadbeat state: with A = 0 the resolvent is exactly FIR, so FIR Phi_uy
    // of horizon T induces exact quadruples of horizon T + 2 and both routes
    // optimize over the same set.
    auto sys = scalar_plant(0.0, 1.0);
    const int T = 2, Hq = T + 2;
    ClosedLoopWeights w;
    w.w_xx = 1.0;
    w.w_ux = 0.5;
    w.w_xy = 1.0;
    w.w_uy = 0.5;
    w.eval_horizon = 16;
    auto phi_uy = synth_of_youla(sys, SynthesisSpec::h2(T, 1, 1), w);

    auto spec = SynthesisSpec::h2(Hq, 1, 1);
    spec.w_xx = 1.0;
    spec.w_ux = 0.5;
    spec.w_xy = 1.0;
    spec.w_uy = 0.5;
    SparsityPattern p;
    MaskSeries uy_mask;
    uy_mask.start_tau = 0;
    for (int tau = 0; tau <= Hq; ++tau)
      uy_mask.masks.push_back(MaskMatrix::Constant(1, 1, tau <= T));
    p.phi_uy = uy_mask;
    spec.pattern = p;
    auto res = synth_of_h2_quadruple(sys, spec);

    for (int s = 0; s <= T; ++s)
      REQUIRE(res.response.phi_uy.at(s)(0, 0) == Approx(phi_uy.at(s)(0, 0)).margin(1e-7));
  }

  SECTION("unstable plants are rejected") {
    auto sys = scalar_plant(1.1, 1.0);
    REQUIRE_THROWS_AS(quadruple_from_phiuy(sys, SpectralSeries::zeros(0, 2, 1, 1), 10), std::domain_error);
  }
}

TEST_CASE("pointwise controller evaluation") {
  SECTION("zero input response evaluates to zero") {
    SystemResponseSF resp{SpectralSeries(1, {scalar(1.0), scalar(0.2)}), SpectralSeries::zeros(1, 2, 1, 1)};
    REQUIRE(std::abs(eval_controller_pointwise(resp, {2.0, 0.0})(0, 0)) == 0.0);
  }

  SECTION("scalar T=2 solution at z = 2") {
    auto sys = scalar_plant(0.5, 1.0);
    auto res = synth_sf_h2(sys, SynthesisSpec::h2(2, 1, 1));
    const auto K = eval_controller_pointwise(res.response, {2.0, 0.0});
    // Phi_x(2) = 1/2 + (2/9)/4 = 5/9, Phi_u(2) = -(5/18)/2 - (1/9)/4 = -1/6.
    REQUIRE(std::abs(K(0, 0) - std::complex<double>(-0.3, 0.0)) < 1e-9);
  }

  SECTION("output-feedback formula agrees with the stable-plant inverse form") {
    auto sys = scalar_plant(0.5, 1.0);
    SpectralSeries phi_uy(0, {scalar(0.4), scalar(-0.3), scalar(0.05)});
    auto quad = quadruple_from_phiuy(sys, phi_uy, 60);
    const std::complex<double> z(1.7, 0.4);
    const auto K1 = eval_controller_pointwise(quad, sys, z);
    // K = (Phi_uy^-1 + G)^-1 with the exact resolvent G(z) = C (zI - A)^-1 B + D.
    const std::complex<double> g = 1.0 / (z - 0.5);
    const std::complex<double> K2 = 1.0 / (1.0 / phi_uy.eval(z)(0, 0) + g);
    REQUIRE(std::abs(K1(0, 0) - K2) < 1e-8);
  }

  SECTION("singular evaluation is reported") {
    SystemResponseSF resp{SpectralSeries::zeros(1, 2, 1, 1), SpectralSeries::zeros(1, 2, 1, 1)};
    REQUIRE_THROWS_AS(eval_controller_pointwise(resp, {2.0, 0.0}), SingularEvaluation);
  }

  SECTION("evaluation inside the unit disk is rejected") {
    SystemResponseSF resp{SpectralSeries(1, {scalar(1.0)}), SpectralSeries(1, {scalar(1.0)})};
    REQUIRE_THROWS_AS(eval_controller_pointwise(resp, {0.5, 0.0}), std::invalid_argument);
  }
}
