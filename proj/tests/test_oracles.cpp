// Frozen expected values, hand-derived before the implementation was run,
// plus self-tests of the independent reference implementations in
// oracles.hpp.  Each constant's derivation is spelled out where it is used.
#include "oracles.hpp"

#include "adaptive_kernel/dynamics.hpp"
#include "adaptive_kernel/kernels.hpp"
#include "adaptive_kernel/model.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace adaptive_kernel;

namespace {

NetworkState one_neuron_1d(double w, double u) {
  NetworkState net(1, 1);
  net.w[0] = w;
  net.U(0, 0) = u;
  return net;
}

}  // namespace

TEST_CASE("init-time kernel closed form matches hand evaluations") {
  Vector e1 = Vector::Zero(2), e2 = Vector::Zero(2);
  e1[0] = 1.0;
  e2[1] = 1.0;

  // t = 1: ((pi - 0)/pi) * 1 + 0 = 1.
  CHECK(k0_closed_form(e1, e1) == Catch::Approx(1.0).margin(1e-15));
  // t = -1: ((pi - pi)/pi) * (-1) + 0 = 0.
  CHECK(k0_closed_form(e1, (-e1).eval()) == Catch::Approx(0.0).margin(1e-15));
  // t = 0: 0 + sqrt(1)/(2 pi) = 1/(2 pi) = 0.15915494309189535.
  CHECK(k0_closed_form(e1, e2) == Catch::Approx(0.15915494309189535).margin(1e-15));
  // t = 1/2: arccos(1/2) = pi/3, so (2/3)(1/2) + sqrt(3/4)/(2 pi)
  //        = 1/3 + sqrt(3)/(4 pi) = 0.47116555718878135.
  Vector y(2);
  y[0] = 0.5;
  y[1] = std::sqrt(0.75);
  CHECK(k0_closed_form(e1, y) == Catch::Approx(0.47116555718878135).margin(1e-15));
}

TEST_CASE("kernel values on a one-neuron network, worked by hand") {
  // m = 1, d = 1, w = 1, u = 1, x = y = 1:
  //   activation part  sigma(1)*sigma(1)          = 1
  //   gate part        w^2 * 1 * 1 * (x . y)      = 1
  const NetworkState net = one_neuron_1d(1.0, 1.0);
  Vector x(1);
  x[0] = 1.0;
  CHECK(gd_kernel(net, x, x) == Catch::Approx(2.0).margin(1e-15));
  CHECK(gd_kernel_k0(net, x, x) == Catch::Approx(1.0).margin(1e-15));
  CHECK(gd_kernel_k1(net, x, x) == Catch::Approx(1.0).margin(1e-15));

  // Single positive atom Theta = [1], mass 1:
  //   H(x, x) = |Theta|^2 sigma(x.Theta)^2 = 1.
  SignedAtomMeasure mu;
  mu.mass = 1.0;
  Vector theta(1);
  theta[0] = 1.0;
  mu.atoms.push_back({+1, theta});
  CHECK(h_kernel(mu, x, x) == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("balance gap and forward pass, worked by hand") {
  // m = 1, w = 1, u = sqrt(2): g = m (w^2 - |u|^2) = 1 - 2 = -1.
  const NetworkState net = one_neuron_1d(1.0, std::sqrt(2.0));
  CHECK(balance_gap(net)[0] == Catch::Approx(-1.0).margin(1e-15));

  // w = (2, 1), u = (1, -1): f(1) = 2 sigma(1) + 1 sigma(-1) = 2,
  //                          f(-1) = 2 sigma(-1) + 1 sigma(1) = 1, f(0) = 0.
  NetworkState two(2, 1);
  two.w[0] = 2.0;
  two.w[1] = 1.0;
  two.U(0, 0) = 1.0;
  two.U(1, 0) = -1.0;
  Vector x(1);
  x[0] = 1.0;
  CHECK(forward(two, x) == 2.0);
  x[0] = -1.0;
  CHECK(forward(two, x) == 1.0);
  x[0] = 0.0;
  CHECK(forward(two, x) == 0.0);
}

TEST_CASE("residual dynamics right-hand side, worked by hand") {
  // n = 1, w = 1, u = 1, x = 1, y = 0: f = 1, Delta = -1, K(x,x) = 2, and the
  // weighted residual vector is q = 1 * (-1), so rhs = -q K q = -2.
  const NetworkState net = one_neuron_1d(1.0, 1.0);
  Matrix X(1, 1);
  X(0, 0) = 1.0;
  Vector Y(1);
  Y[0] = 0.0;
  const Dataset data(X, Y);
  const ResidualOdeReport rep = check_residual_ode(net, data, 1e-8);
  CHECK(rep.rhs == Catch::Approx(-2.0).margin(1e-9));
  CHECK(rep.rel_err < 1e-6);
}

TEST_CASE("strongly convex loss has the stated value and slope") {
  const Loss loss{LossKind::StronglyConvex, 0.25};
  CHECK(loss.value(3.0, 3.0) == 0.0);  // r = 0
  // r = 1: value = alpha/2 + log cosh 1, slope = alpha + tanh 1.
  CHECK(loss.value(0.0, 1.0) ==
        Catch::Approx(0.125 + std::log(std::cosh(1.0))).margin(1e-15));
  CHECK(loss.derivative(0.0, 1.0) == Catch::Approx(0.25 + std::tanh(1.0)).margin(1e-15));
  // Curvature of log cosh is sech^2 >= 0, so slope differences across any
  // interval are at least alpha * interval: check at r = -2 vs r = 2.
  const double lo = loss.derivative(0.0, -2.0), hi = loss.derivative(0.0, 2.0);
  CHECK(hi - lo >= 0.25 * 4.0);
}

TEST_CASE("finite-difference oracle reproduces a hand gradient") {
  // w = 1, u = 2, x = 1, y = 0, squared loss: f = 2, dE/dw = 2 * 2 = 4,
  // dE/du = 2 * 1 * 1 = 2.
  const NetworkState net = one_neuron_1d(1.0, 2.0);
  Matrix X(1, 1);
  X(0, 0) = 1.0;
  Vector Y(1);
  Y[0] = 0.0;
  const Dataset data(X, Y);
  const auto g = oracle::fd_gradient(net, data, 0.0, Loss{}, 1e-6);
  REQUIRE(g.size() == 2);
  CHECK(g[0] == Catch::Approx(4.0).margin(1e-8));
  CHECK(g[1] == Catch::Approx(2.0).margin(1e-8));
}

TEST_CASE("jacobi oracle recovers known spectra") {
  Matrix a(2, 2);
  a << 2.0, 1.0, 1.0, 2.0;  // eigenvalues 3 and 1
  const auto eigs = oracle::jacobi_eigenvalues(a);
  REQUIRE(eigs.size() == 2);
  CHECK(eigs[0] == Catch::Approx(3.0).margin(1e-12));
  CHECK(eigs[1] == Catch::Approx(1.0).margin(1e-12));

  Matrix d = Matrix::Zero(3, 3);
  d(0, 0) = 5.0;
  d(1, 1) = 2.0;
  d(2, 2) = 9.0;
  const auto de = oracle::jacobi_eigenvalues(d);
  CHECK(de[0] == 9.0);
  CHECK(de[1] == 5.0);
  CHECK(de[2] == 2.0);
}

TEST_CASE("penrose defect oracle is zero exactly when it should be") {
  const Matrix id = Matrix::Identity(3, 3);
  CHECK(oracle::penrose_defect(id, id) == 0.0);
  Matrix p = id * 0.5;
  CHECK(oracle::penrose_defect(id, p) > 0.1);
  const Matrix mat = oracle::materialize(3, [&](const Vector& e) { return (2.0 * e).eval(); });
  CHECK((mat - 2.0 * id).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("monte carlo estimator is seed-reproducible") {
  Vector x = Vector::Zero(3), y = Vector::Zero(3);
  x[0] = 1.0;
  y[1] = 1.0;
  const McEstimate a = k0_monte_carlo(x, y, 2000, 7);
  const McEstimate b = k0_monte_carlo(x, y, 2000, 7);
  const McEstimate c = k0_monte_carlo(x, y, 2000, 8);
  CHECK(a.value == b.value);
  CHECK(a.std_error == b.std_error);
  CHECK(a.value != c.value);
  CHECK(a.std_error > 0.0);
}
