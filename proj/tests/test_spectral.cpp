// Eigendecomposition, pseudo-inverse, ridge solves, and the stationarity
// checks built on them.
#include "oracles.hpp"

#include "adaptive_kernel/dynamics.hpp"
#include "adaptive_kernel/experiments.hpp"
#include "adaptive_kernel/kernels.hpp"
#include "adaptive_kernel/model.hpp"
#include "adaptive_kernel/spectral.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace adaptive_kernel;

namespace {

Matrix random_symmetric(int n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = rng.gaussian();
  return ((a + a.transpose()) / 2.0).eval();
}

Matrix random_psd_rank(int n, int r, std::uint64_t seed) {
  Rng rng(seed);
  Matrix b(n, r);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < r; ++j) b(i, j) = rng.gaussian();
  return (b * b.transpose()).eval();
}

}  // namespace

TEST_CASE("eigenvalues agree with the jacobi oracle and come out descending") {
  for (int n : {1, 2, 3, 5, 8}) {
    const Matrix a = random_symmetric(n, 100 + n);
    const Spectrum s = eig_sym(a);
    const auto ref = oracle::jacobi_eigenvalues(a);
    REQUIRE(s.eigenvalues.size() == n);
    for (int i = 0; i + 1 < n; ++i) CHECK(s.eigenvalues[i] >= s.eigenvalues[i + 1]);
    for (int i = 0; i < n; ++i)
      CHECK(s.eigenvalues[i] == Catch::Approx(ref[i]).margin(1e-10 * (1.0 + std::abs(ref[i]))));
  }
}

TEST_CASE("eigenvectors reconstruct the matrix") {
  const Matrix a = random_symmetric(6, 7);
  const Spectrum s = eig_sym(a, true);
  REQUIRE(s.vectors.has_value());
  const Matrix v = *s.vectors;
  Matrix lam = Matrix::Zero(6, 6);
  for (int i = 0; i < 6; ++i) lam(i, i) = s.eigenvalues[i];
  CHECK(((v * lam * v.transpose()) - a).cwiseAbs().maxCoeff() < 1e-12);
  // Columns are orthonormal and ordered with the eigenvalues.
  CHECK(((v.transpose() * v) - Matrix::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((a * v.col(0) - s.eigenvalues[0] * v.col(0)).norm() < 1e-10);
}

TEST_CASE("asymmetric input is rejected as a precondition") {
  Matrix a = random_symmetric(4, 9);
  a(0, 1) += 1e-3;
  CHECK_THROWS_AS(eig_sym(a), precondition_error);
}

TEST_CASE("numerical rank counts eigenvalues above the relative floor") {
  for (int r : {0, 1, 3, 6}) {
    const Matrix g = r == 0 ? Matrix::Zero(6, 6) : random_psd_rank(6, r, 200 + r);
    CHECK(numerical_rank(g) == r);
  }
}

TEST_CASE("pseudo-inverse application satisfies the penrose identities") {
  for (int r : {1, 2, 4}) {
    const Matrix g = random_psd_rank(5, r, 300 + r);
    const Matrix p =
        oracle::materialize(5, [&](const Vector& e) { return pinv_apply(g, e); });
    CHECK(oracle::penrose_defect(g, p) < 1e-10 * (1.0 + g.cwiseAbs().maxCoeff()));
  }
  // The zero matrix maps everything to zero.
  CHECK(pinv_apply(Matrix::Zero(3, 3), Vector::Ones(3)).norm() == 0.0);
}

TEST_CASE("ridge solution approaches the pseudo-inverse as lambda vanishes") {
  // Shift by the identity so the smallest eigenvalue is >= 1 and the
  // lambda -> 0 limit is well inside the numerics.
  const Matrix g = random_psd_rank(6, 6, 17) + Matrix::Identity(6, 6);
  Rng rng(18);
  Vector y(6);
  for (int i = 0; i < 6; ++i) y[i] = rng.gaussian();
  const Vector exact = pinv_apply(g, y);
  double prev_gap = std::numeric_limits<double>::infinity();
  for (const double lam : {1e-2, 1e-4, 1e-6}) {
    const RidgeSolution sol = ridge_solve(g, y, lam);
    const double gap = (sol.c - exact).norm();
    CHECK(gap < prev_gap);
    prev_gap = gap;
  }
  CHECK(prev_gap < 1e-4);
  CHECK_THROWS_AS(ridge_solve(g, y, -1.0), config_error);
}

TEST_CASE("training-set fit degrades monotonically with the ridge strength") {
  const Matrix g = random_psd_rank(8, 8, 21);
  Rng rng(22);
  Vector y(8);
  for (int i = 0; i < 8; ++i) y[i] = rng.gaussian();
  double prev_err = -1.0;
  for (const double lam : {0.0, 1e-3, 1e-2, 1e-1, 1.0}) {
    const RidgeSolution sol = ridge_solve(g, y, lam);
    const double err = (g * sol.c - y).norm();
    CHECK(err >= prev_err - 1e-12);
    prev_err = err;
  }
}

TEST_CASE("null space of the full kernel sits inside the null space of H") {
  const NetworkState net = init_network({InitScheme::BalancedFromMeasure, 25}, 6, 4);
  const SignedAtomMeasure mu = to_signed_measure(net);
  Rng rng(26);
  Matrix X(12, 4);  // n > m forces a genuine null space of K
  for (int i = 0; i < 12; ++i)
    for (int k = 0; k < 4; ++k) X(i, k) = rng.gaussian();
  const GramMatrix K = gram(GramTag::K, net, X);
  const GramMatrix H = gram(GramTag::H, mu, X);
  const InclusionReport rep = check_kernel_inclusion(K.G, H.G);
  CHECK(rep.null_count > 0);
  CHECK(rep.pass);
}

TEST_CASE("stationary points project the residual onto the kernel span") {
  const TeacherData td = gen_teacher(8, 3, 2, 29);
  const NetworkState net0 = init_network({InitScheme::BalancedFromMeasure, 30}, 24, 3);
  FlowConfig cfg;
  cfg.eta = 0.05;
  cfg.max_steps = 400000;
  cfg.eps_grad = 1e-9;
  const FlowResult res = run_flow(net0, td.data, cfg);
  REQUIRE(res.termination == Termination::Stationary);

  const SignedAtomMeasure mu = to_signed_measure(res.net, true);
  const ProjectionReport proj = check_projection_optimality(res.net, td.data, mu, cfg.eps_grad);
  CHECK(proj.pass);
  const KernelNullReport null = check_kernel_null(res.net, td.data, cfg.eps_grad);
  CHECK(null.pass);
  CHECK(null.quad_form == Catch::Approx(null.velocity_sq).margin(1e-18));
}

TEST_CASE("regularized stationary networks match kernel ridge on held-out points") {
  const TeacherData td = gen_teacher(8, 3, 2, 33);
  const NetworkState net0 = init_network({InitScheme::BalancedFromMeasure, 34}, 24, 3);
  const double lambda = 0.1;
  FlowConfig cfg;
  cfg.eta = 0.05;
  cfg.max_steps = 2000000;
  cfg.lambda = lambda;
  cfg.eps_grad = 1e-9;
  cfg.log_every = 100000;
  const FlowResult res = run_flow(net0, td.data, cfg);

  Rng rng(35);
  Matrix grid(16, 3);
  for (int i = 0; i < 16; ++i)
    for (int k = 0; k < 3; ++k) grid(i, k) = rng.gaussian();
  const RidgelessReport rep = check_nn_equals_ridgeless(res.net, td.data, lambda, grid, true);
  CHECK(rep.lambda_eff == Catch::Approx(8.0 * lambda / 24.0).margin(1e-15));
  // Discrepancy is controlled by (m / lambda) * achieved gradient norm.
  CHECK(rep.max_discrepancy <= 10.0 * (24.0 / lambda) * res.achieved_grad_norm);
}

TEST_CASE("spectrum helpers carry provenance metadata") {
  const NetworkState net = init_network({InitScheme::BalancedFromMeasure, 37}, 12, 3);
  Rng rng(38);
  Matrix X(6, 3);
  for (int i = 0; i < 6; ++i)
    for (int k = 0; k < 3; ++k) X(i, k) = rng.gaussian();
  const GramMatrix K = gram(GramTag::K, net, X, "unit-test");
  const Spectrum s = eig_sym(K, false, 1.25);
  CHECK(s.t == 1.25);
  CHECK(s.source.find("unit-test") != std::string::npos);
}
