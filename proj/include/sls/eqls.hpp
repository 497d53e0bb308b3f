#pragma once
// Equality-constrained least squares via the dense KKT system
//   [ H  E' ] [v ]   [ -g ]
//   [ E  0  ] [mu] = [  d ]
// solved with a complete orthogonal decomposition, so rank-deficient systems
// get the minimum-norm solution and inconsistent constraints surface as a
// nonzero constraint residual instead of garbage.

#include <Eigen/Dense>

#include "sls/lti.hpp"

namespace sls {

struct EqlsResult {
  VectorXd v;
  VectorXd multipliers;
  double constraint_residual = 0.0;  // ||E v - d||_inf
  double kkt_gradient_norm = 0.0;    // ||H v + g + E' mu||_inf
};

inline EqlsResult solve_equality_ls(const MatrixXd& H, const VectorXd& g,
                                    const MatrixXd& E, const VectorXd& d) {
  const auto n = H.rows();
  const auto m = E.rows();
  detail::require(H.cols() == n, "solve_equality_ls: H must be square");
  detail::require(g.size() == n, "solve_equality_ls: g dimension mismatch");
  detail::require(m == 0 || E.cols() == n, "solve_equality_ls: E column count mismatch");
  detail::require(d.size() == m, "solve_equality_ls: d dimension mismatch");

  MatrixXd kkt = MatrixXd::Zero(n + m, n + m);
  kkt.topLeftCorner(n, n) = H;
  if (m > 0) {
    kkt.topRightCorner(n, m) = E.transpose();
    kkt.bottomLeftCorner(m, n) = E;
  }
  VectorXd rhs(n + m);
  rhs.head(n) = -g;
  rhs.tail(m) = d;

  Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod(kkt);
  const VectorXd sol = cod.solve(rhs);

  EqlsResult out;
  out.v = sol.head(n);
  out.multipliers = sol.tail(m);
  out.constraint_residual = m == 0 ? 0.0 : (E * out.v - d).cwiseAbs().maxCoeff();
  VectorXd grad = H * out.v + g;
  if (m > 0) grad += E.transpose() * out.multipliers;
  out.kkt_gradient_norm = n == 0 ? 0.0 : grad.cwiseAbs().maxCoeff();
  return out;
}

}  // namespace sls
