// Symmetric eigendecomposition, Moore-Penrose application, kernel
// ridge/ridgeless solvers, and the stationarity checks built on them.
#pragma once

#include "adaptive_kernel/common.hpp"
#include "adaptive_kernel/dynamics.hpp"
#include "adaptive_kernel/kernels.hpp"
#include "adaptive_kernel/model.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>

namespace adaptive_kernel {

// ---------------------------------------------------------------------------
// Spectrum
// ---------------------------------------------------------------------------
struct Spectrum {
  Vector eigenvalues;              // sorted descending
  std::optional<Matrix> vectors;   // columns aligned with eigenvalues
  std::string source;              // Gram id / provenance
  double t = 0.0;                  // trajectory time of the source Gram

  int n() const { return static_cast<int>(eigenvalues.size()); }
};

namespace detail {
inline void require_symmetric(const Matrix& A, const char* who) {
  if (A.rows() != A.cols()) throw shape_error(std::string(who) + ": matrix must be square");
  const double defect = (A - A.transpose()).cwiseAbs().maxCoeff();
  const double scale = std::max(A.cwiseAbs().maxCoeff(), 1e-300);
  if (defect > 1e-8 * scale)
    throw precondition_error(std::string(who) + ": matrix is not symmetric within tolerance");
}
}  // namespace detail

// Full real spectrum in descending order; orthonormal eigenvectors on
// request.  The reconstruction A = V diag(l) V' is verified to 1e-8 relative
// whenever vectors are retained, so a silently bad factorization cannot
// propagate.
inline Spectrum eig_sym(const Matrix& A, bool with_vectors = false,
                        std::string source = std::string(), double t = 0.0) {
  detail::require_symmetric(A, "eig_sym");
  Eigen::SelfAdjointEigenSolver<Matrix> solver;
  solver.compute(A, with_vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success)
    throw numeric_error("eig_sym: eigensolver did not converge");
  const int n = static_cast<int>(A.rows());
  Spectrum s;
  s.source = std::move(source);
  s.t = t;
  s.eigenvalues = solver.eigenvalues().reverse();
  if (with_vectors) {
    s.vectors = solver.eigenvectors().rowwise().reverse();
    const Matrix rebuilt =
        (*s.vectors) * s.eigenvalues.asDiagonal() * s.vectors->transpose();
    const double rel = (A - rebuilt).norm() / std::max(A.norm(), 1e-300);
    if (rel > 1e-8)
      throw numeric_error("eig_sym: reconstruction error " + std::to_string(rel));
  }
  (void)n;
  return s;
}

inline Spectrum eig_sym(const GramMatrix& G, bool with_vectors = false, double t = 0.0) {
  return eig_sym(G.G, with_vectors, to_string(G.tag) + ":" + G.provenance, t);
}

// Numerical rank: eigenvalues above 1e-10 of the largest one.  The relative
// cutoff keeps the notion scale-free.
inline int numerical_rank(const Spectrum& s) {
  if (s.n() == 0) return 0;
  const double top = s.eigenvalues.cwiseAbs().maxCoeff();
  if (top == 0.0) return 0;
  const double cut = 1e-10 * top;
  int rank = 0;
  for (int i = 0; i < s.n(); ++i)
    if (std::abs(s.eigenvalues[i]) > cut) ++rank;
  return rank;
}

inline int numerical_rank(const Matrix& A) { return numerical_rank(eig_sym(A)); }

// ---------------------------------------------------------------------------
// Moore-Penrose application via the eigendecomposition, zeroing eigenvalues
// below rcond times the largest magnitude.
// ---------------------------------------------------------------------------
inline Vector pinv_apply(const Matrix& G, const Vector& Y, double rcond = 1e-10) {
  if (G.rows() != Y.size()) throw shape_error("pinv_apply: dimension mismatch");
  const Spectrum s = eig_sym(G, true);
  const Matrix& V = *s.vectors;
  const double top = s.eigenvalues.cwiseAbs().maxCoeff();
  Vector z = V.transpose() * Y;
  for (int i = 0; i < s.n(); ++i) {
    const double l = s.eigenvalues[i];
    z[i] = std::abs(l) > rcond * top && top > 0.0 ? z[i] / l : 0.0;
  }
  return V * z;
}

// ---------------------------------------------------------------------------
// Kernel ridge regression on a Gram matrix.
// ---------------------------------------------------------------------------
struct RidgeSolution {
  Vector c;                // coefficients, length n
  double lambda_eff = 0.0; // the Gram-level ridge n*lambda/m
};

// c = [lambda_eff I + G]^{-1} Y for lambda_eff > 0; the pseudo-inverse path
// covers the ridgeless limit, so a singular Gram never crashes.
inline RidgeSolution ridge_solve(const Matrix& G, const Vector& Y, double lambda_eff,
                                 double rcond = 1e-10) {
  if (G.rows() != Y.size()) throw shape_error("ridge_solve: dimension mismatch");
  if (lambda_eff < 0.0) throw config_error("ridge_solve: lambda_eff must be >= 0");
  detail::require_symmetric(G, "ridge_solve");
  RidgeSolution sol;
  sol.lambda_eff = lambda_eff;
  if (lambda_eff == 0.0) {
    sol.c = pinv_apply(G, Y, rcond);
    return sol;
  }
  Matrix A = G;
  A.diagonal().array() += lambda_eff;
  sol.c = Eigen::LDLT<Matrix>(A).solve(Y);
  return sol;
}

inline RidgeSolution ridge_solve(const GramMatrix& G, const Vector& Y, double lambda_eff,
                                 double rcond = 1e-10) {
  return ridge_solve(G.G, Y, lambda_eff, rcond);
}

// Cross-evaluations k(x, x_i) of a measure-form kernel against training rows.
inline Vector kernel_cross(GramTag tag, const SignedAtomMeasure& mu, const Matrix& Xtrain,
                           const Vector& x) {
  Vector k(Xtrain.rows());
  for (int i = 0; i < Xtrain.rows(); ++i) {
    const Vector xi = Xtrain.row(i).transpose();
    switch (tag) {
      case GramTag::K: k[i] = gd_kernel(mu, x, xi); break;
      case GramTag::K0part: k[i] = gd_kernel_k0(mu, x, xi); break;
      case GramTag::K1part: k[i] = gd_kernel_k1(mu, x, xi); break;
      case GramTag::H: k[i] = h_kernel(mu, x, xi); break;
      default: throw config_error("kernel_cross: tag must be a measure-form kernel");
    }
  }
  return k;
}

inline double ridge_predict(GramTag tag, const SignedAtomMeasure& mu, const Matrix& Xtrain,
                            const RidgeSolution& sol, const Vector& x) {
  return kernel_cross(tag, mu, Xtrain, x).dot(sol.c);
}

// ---------------------------------------------------------------------------
// Stationarity-as-projection check.
//
// For the squared loss at lambda = 0, the per-atom functional
//   r(Theta_j) = < Delta, |Theta_j| relu(.'Theta_j) >_mu-hat
// is exactly sqrt(m) |Theta_j| times the j-th second-layer velocity
// component, so at a declared stationary point (velocity norm < eps_grad)
//   max_j |r(Theta_j)| <= sqrt(m) max_j |Theta_j| * eps_grad
// holds with no slack.  The reported bound multiplies the conversion factor
// scale = sqrt(m) max_j |Theta_j| by the slack constant C = 10, since a
// discrete trajectory only ever reaches approximate stationarity.
// ---------------------------------------------------------------------------
struct ProjectionReport {
  double max_abs_r = 0.0;
  int argmax_atom = -1;
  double scale = 0.0;     // sqrt(m) * max_j |Theta_j|
  double bound = 0.0;     // 10 * eps_grad * scale
  double delta_norm = 0.0;
  bool pass = false;
};

inline ProjectionReport check_projection_optimality(const NetworkState& net, const Dataset& data,
                                                    const SignedAtomMeasure& mu,
                                                    double eps_grad) {
  net.require_valid();
  data.require_valid();
  const Vector delta = residual(net, data);
  ProjectionReport report;
  report.delta_norm = delta.norm();
  double max_theta = 0.0;
  for (std::size_t j = 0; j < mu.atoms.size(); ++j) {
    const auto& atom = mu.atoms[j];
    max_theta = std::max(max_theta, atom.theta.norm());
    double r = 0.0;
    for (int i = 0; i < data.n(); ++i)
      r += data.weights[i] * delta[i] * atom.theta.norm() *
           relu(data.X.row(i).dot(atom.theta));
    if (std::abs(r) > report.max_abs_r) {
      report.max_abs_r = std::abs(r);
      report.argmax_atom = static_cast<int>(j);
    }
  }
  report.scale = std::sqrt(static_cast<double>(net.m)) * max_theta;
  report.bound = 10.0 * eps_grad * report.scale;
  report.pass = report.max_abs_r <= report.bound;
  return report;
}

// ---------------------------------------------------------------------------
// Kernel-null residual check.  For the squared loss at lambda = 0 the
// quadratic form Delta' W K W Delta equals the squared velocity norm
// identically, so at declared stationarity it sits below eps_grad^2; the
// report applies the same slack constant C = 10.
// ---------------------------------------------------------------------------
struct KernelNullReport {
  double quad_form = 0.0;     // Delta' W K W Delta
  double velocity_sq = 0.0;   // squared velocity norm at lambda = 0
  double bound = 0.0;         // 10 * eps_grad^2
  bool pass = false;
};

inline KernelNullReport check_kernel_null(const NetworkState& net, const Dataset& data,
                                          double eps_grad) {
  const Vector delta = residual(net, data);
  const GramMatrix gk = gram(GramTag::K, net, data.X, "kernel null check");
  const Vector wd = data.weights.cwiseProduct(delta);
  KernelNullReport report;
  report.quad_form = wd.dot(gk.G * wd);
  report.velocity_sq = grad(net, data, 0.0).squared_norm();
  report.bound = 10.0 * eps_grad * eps_grad;
  report.pass = report.quad_form <= report.bound;
  return report;
}

// Gram-level kernel inclusion: every numerical-null direction of the K Gram
// must be annihilated by the H Gram (the finite-sample surrogate for
// "the H kernel's null space contains the K kernel's").
struct InclusionReport {
  int null_count = 0;
  double max_ratio = 0.0;  // max over null v of |H v| / (|H|_2 |v|)
  bool pass = false;
};

inline InclusionReport check_kernel_inclusion(const Matrix& K, const Matrix& H) {
  if (K.rows() != H.rows()) throw shape_error("check_kernel_inclusion: size mismatch");
  const Spectrum sk = eig_sym(K, true);
  const double cut = 1e-10 * std::max(sk.eigenvalues.cwiseAbs().maxCoeff(), 0.0);
  const double h_norm = eig_sym(H).eigenvalues.cwiseAbs().maxCoeff();
  InclusionReport report;
  report.pass = true;
  for (int i = 0; i < sk.n(); ++i) {
    if (std::abs(sk.eigenvalues[i]) > cut) continue;
    ++report.null_count;
    const Vector v = sk.vectors->col(i);
    const double ratio = (H * v).norm() / std::max(h_norm, 1e-300);
    report.max_ratio = std::max(report.max_ratio, ratio);
    if (ratio > 1e-6) report.pass = false;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Stationary network vs kernel ridge regression with the adaptive kernel.
//
// At a stationary point of the lambda-regularized flow, the second-layer
// stationarity condition resolves the network into
//   f(x) = A(x, X) [ (n lambda / m) I + A(X, X) ]^{-1} Y,
// where A is the activation kernel of the trained measure
// (A(x,y) = (1/m) sum_j relu(x'Theta_j) relu(y'Theta_j), the K1 part).
// The |Theta|^2-weighted kernel H shares its RKHS on the support but does
// not satisfy this identity; the ridge system below therefore uses K1.
// ---------------------------------------------------------------------------
struct RidgelessReport {
  double lambda = 0.0;
  double lambda_eff = 0.0;
  double max_discrepancy = 0.0;       // held-out grid, |f_nn - f_ridge|
  double train_max_residual_net = 0.0;    // max_i |y_i - f_nn(x_i)|
  double train_max_residual_ridge = 0.0;  // max_i |y_i - f_ridge(x_i)|
};

inline RidgelessReport check_nn_equals_ridgeless(const NetworkState& net, const Dataset& data,
                                                 double lambda, const Matrix& grid,
                                                 bool force_measure = false) {
  net.require_valid();
  data.require_valid();
  const SignedAtomMeasure mu = to_signed_measure(net, force_measure);
  const GramMatrix g1 = gram(GramTag::K1part, mu, data.X, "ridge check");
  RidgelessReport report;
  report.lambda = lambda;
  report.lambda_eff = static_cast<double>(data.n()) * lambda / static_cast<double>(net.m);
  const RidgeSolution sol = ridge_solve(g1, data.Y, report.lambda_eff);
  for (int r = 0; r < grid.rows(); ++r) {
    const Vector x = grid.row(r).transpose();
    const double fn = forward(net, x);
    const double fr = ridge_predict(GramTag::K1part, mu, data.X, sol, x);
    report.max_discrepancy = std::max(report.max_discrepancy, std::abs(fn - fr));
  }
  const Vector f_net = forward_all(net, data.X);
  const Vector f_ridge = g1.G * sol.c;
  report.train_max_residual_net = (data.Y - f_net).cwiseAbs().maxCoeff();
  report.train_max_residual_ridge = (data.Y - f_ridge).cwiseAbs().maxCoeff();
  return report;
}

}  // namespace adaptive_kernel
