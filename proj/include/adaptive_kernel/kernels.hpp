// Kernel evaluators and Gram-matrix builders.
//
// The training-induced kernel K(x,y) = sum_j [ relu(x'u_j) relu(y'u_j) +
// w_j^2 gate(x'u_j) gate(y'u_j) x'y ] splits into an activation-gated linear
// part (K0) and a feature part (K1).  For balanced networks the same kernels
// are integrals against the signed atom measure; H is the reproducing kernel
// of the adaptive RKHS, carrying an extra |Theta|^2 weight.  K0's
// infinite-width limit under the Gaussian-Rademacher initialization has a
// closed form on unit vectors, reproduced here together with its Monte Carlo
// estimator.  A recursive evaluator covers deeper ReLU MLPs.
#pragma once

#include "adaptive_kernel/common.hpp"
#include "adaptive_kernel/model.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace adaptive_kernel {

// ---------------------------------------------------------------------------
// Pointwise evaluators, network (parameter) form.
// ---------------------------------------------------------------------------

// Activation-gated linear part: sum_j w_j^2 gate_j(x) gate_j(y) x'y.
inline double gd_kernel_k0(const NetworkState& net, const Vector& x, const Vector& y) {
  if (x.size() != net.d || y.size() != net.d) throw shape_error("gd_kernel_k0: dimension mismatch");
  const double xy = x.dot(y);
  double acc = 0.0;
  for (int j = 0; j < net.m; ++j) {
    const double a = net.U.row(j).dot(x);
    const double b = net.U.row(j).dot(y);
    acc += net.w[j] * net.w[j] * relu_gate(a) * relu_gate(b) * xy;
  }
  return acc;
}

// Feature part: sum_j relu(x'u_j) relu(y'u_j).
inline double gd_kernel_k1(const NetworkState& net, const Vector& x, const Vector& y) {
  if (x.size() != net.d || y.size() != net.d) throw shape_error("gd_kernel_k1: dimension mismatch");
  double acc = 0.0;
  for (int j = 0; j < net.m; ++j)
    acc += relu(net.U.row(j).dot(x)) * relu(net.U.row(j).dot(y));
  return acc;
}

inline double gd_kernel(const NetworkState& net, const Vector& x, const Vector& y) {
  if (x.size() != net.d || y.size() != net.d) throw shape_error("gd_kernel: dimension mismatch");
  const double xy = x.dot(y);
  double acc = 0.0;
  for (int j = 0; j < net.m; ++j) {
    const double a = net.U.row(j).dot(x);
    const double b = net.U.row(j).dot(y);
    acc += relu(a) * relu(b) + net.w[j] * net.w[j] * relu_gate(a) * relu_gate(b) * xy;
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Pointwise evaluators, measure form.  These integrate against |rho| (signs
// dropped); they coincide with the parameter form when the source network is
// balanced, which to_signed_measure enforces.
// ---------------------------------------------------------------------------

inline double gd_kernel_k0(const SignedAtomMeasure& mu, const Vector& x, const Vector& y) {
  const double xy = x.dot(y);
  double acc = 0.0;
  for (const auto& a : mu.atoms) {
    const double s = a.theta.dot(x);
    const double t = a.theta.dot(y);
    acc += a.theta.squaredNorm() * relu_gate(s) * relu_gate(t) * xy;
  }
  return acc * mu.mass;
}

inline double gd_kernel_k1(const SignedAtomMeasure& mu, const Vector& x, const Vector& y) {
  double acc = 0.0;
  for (const auto& a : mu.atoms) acc += relu(a.theta.dot(x)) * relu(a.theta.dot(y));
  return acc * mu.mass;
}

inline double gd_kernel(const SignedAtomMeasure& mu, const Vector& x, const Vector& y) {
  const double xy = x.dot(y);
  double acc = 0.0;
  for (const auto& a : mu.atoms) {
    const double s = a.theta.dot(x);
    const double t = a.theta.dot(y);
    acc += a.theta.squaredNorm() * relu_gate(s) * relu_gate(t) * xy + relu(s) * relu(t);
  }
  return acc * mu.mass;
}

// Reproducing kernel of the adaptive RKHS:
// H(x,y) = (1/m) sum_j |Theta_j|^2 relu(x'Theta_j) relu(y'Theta_j).
inline double h_kernel(const SignedAtomMeasure& mu, const Vector& x, const Vector& y) {
  double acc = 0.0;
  for (const auto& a : mu.atoms)
    acc += a.theta.squaredNorm() * relu(a.theta.dot(x)) * relu(a.theta.dot(y));
  return acc * mu.mass;
}

// ---------------------------------------------------------------------------
// Width limit of the Gaussian-Rademacher initialization, on unit vectors.
// ---------------------------------------------------------------------------

inline void require_unit(const Vector& x, const char* who) {
  if (std::abs(x.norm() - 1.0) > 1e-8) {
    std::ostringstream msg;
    msg << who << ": input must be a unit vector (|x| = " << x.norm() << ")";
    throw precondition_error(msg.str());
  }
}

// K0(x,y) = ((pi - arccos t)/pi) t + sqrt(1-t^2)/(2 pi) with t = x'y,
// clamped to [-1,1] to absorb round-off on vectors that are unit only to
// within tolerance.
inline double k0_closed_form(const Vector& x, const Vector& y) {
  if (x.size() != y.size()) throw shape_error("k0_closed_form: dimension mismatch");
  require_unit(x, "k0_closed_form");
  require_unit(y, "k0_closed_form");
  const double t = std::clamp(x.dot(y), -1.0, 1.0);
  return ((M_PI - std::acos(t)) / M_PI) * t + std::sqrt(1.0 - t * t) / (2.0 * M_PI);
}

struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

// Empirical K0 from a freshly sampled Gaussian-Rademacher network with
// m_samples neurons.  The value is exactly the pointwise kernel of that
// network; the standard error comes from the per-neuron i.i.d. terms.
inline McEstimate k0_monte_carlo(const Vector& x, const Vector& y, std::int64_t m_samples,
                                 std::uint64_t seed) {
  if (x.size() != y.size()) throw shape_error("k0_monte_carlo: dimension mismatch");
  require_unit(x, "k0_monte_carlo");
  require_unit(y, "k0_monte_carlo");
  const int d = static_cast<int>(x.size());
  Rng rng(seed);
  const double root_m = std::sqrt(static_cast<double>(m_samples));
  const double inv_m = 1.0 / static_cast<double>(m_samples);
  const double xy = x.dot(y);
  double acc = 0.0;     // kernel value
  double acc_sq = 0.0;  // sum of squared per-neuron terms, rescaled by m
  Vector u(d);
  for (std::int64_t j = 0; j < m_samples; ++j) {
    rng.rademacher();  // w_j enters only through w_j^2 = 1/m
    for (int k = 0; k < d; ++k) u[k] = rng.gaussian() / root_m;
    const double a = u.dot(x);
    const double b = u.dot(y);
    const double term = relu(a) * relu(b) + inv_m * relu_gate(a) * relu_gate(b) * xy;
    acc += term;
    const double scaled = static_cast<double>(m_samples) * term;
    acc_sq += scaled * scaled;
  }
  McEstimate est;
  est.value = acc;
  // acc is the mean of the m rescaled i.i.d. terms; standard error of that
  // mean is sd(term) / sqrt(m).
  const double mean = acc;
  const double var = std::max(0.0, acc_sq * inv_m - mean * mean);
  est.std_error = std::sqrt(var * inv_m);
  return est;
}

// ---------------------------------------------------------------------------
// Multi-layer perceptron kernel (ReLU hidden layers, identity scalar output).
// ---------------------------------------------------------------------------

struct MlpState {
  // weights[l] maps layer l (size sizes[l]) to layer l+1 (size sizes[l+1]).
  std::vector<int> sizes;
  std::vector<Matrix> weights;

  int depth() const { return static_cast<int>(weights.size()); }

  void require_valid() const {
    if (sizes.size() < 2 || weights.size() + 1 != sizes.size())
      throw shape_error("MlpState: need sizes L0..Lh with one weight matrix per step");
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      if (weights[l].rows() != sizes[l + 1] || weights[l].cols() != sizes[l])
        throw shape_error("MlpState: weight matrix shape disagrees with layer sizes");
      if (!weights[l].allFinite()) throw numeric_error("MlpState: non-finite weights");
    }
    if (sizes.back() != 1) throw shape_error("MlpState: scalar output required (L_h = 1)");
  }
};

inline MlpState random_mlp(const std::vector<int>& sizes, std::uint64_t seed) {
  MlpState mlp;
  mlp.sizes = sizes;
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    Matrix w(sizes[l + 1], sizes[l]);
    for (int r = 0; r < w.rows(); ++r)
      for (int c = 0; c < w.cols(); ++c) w(r, c) = rng.gaussian() / std::sqrt(double(sizes[l]));
    mlp.weights.push_back(std::move(w));
  }
  mlp.require_valid();
  return mlp;
}

inline double mlp_forward(const MlpState& mlp, const Vector& x) {
  mlp.require_valid();
  if (x.size() != mlp.sizes.front()) throw shape_error("mlp_forward: x has wrong dimension");
  Vector o = x;
  for (int l = 0; l < mlp.depth(); ++l) {
    Vector v = mlp.weights[l] * o;
    o = (l + 1 < mlp.depth()) ? v.cwiseMax(0.0) : v;  // identity at the output
  }
  return o[0];
}

// Sum over all parameters of dg(x)/dTheta * dg(y)/dTheta, assembled layer by
// layer: with backpropagated sensitivities delta^{l+1} and activations o^l,
// the layer-l gradient is delta^{l+1} (o^l)', so its contribution to the
// kernel is (delta^{l+1}(x) . delta^{l+1}(y)) * (o^l(x) . o^l(y)).  Unrolled,
// this is the recursion K^{h+1}(x,y) = K^h(o^1(x), o^1(y)) + first-layer
// term; the depth-1 base case is x'y.
inline double mlp_kernel(const MlpState& mlp, const Vector& x, const Vector& y) {
  mlp.require_valid();
  if (x.size() != mlp.sizes.front() || y.size() != mlp.sizes.front())
    throw shape_error("mlp_kernel: input dimension mismatch");
  const int h = mlp.depth();

  // Forward: keep activations o^l and pre-activations v^l for both inputs.
  std::vector<Vector> ox(h + 1), oy(h + 1), vx(h + 1), vy(h + 1);
  ox[0] = x;
  oy[0] = y;
  for (int l = 0; l < h; ++l) {
    vx[l + 1] = mlp.weights[l] * ox[l];
    vy[l + 1] = mlp.weights[l] * oy[l];
    const bool hidden = l + 1 < h;
    ox[l + 1] = hidden ? vx[l + 1].cwiseMax(0.0).eval() : vx[l + 1];
    oy[l + 1] = hidden ? vy[l + 1].cwiseMax(0.0).eval() : vy[l + 1];
  }

  // Backward: delta^h = 1 (identity output), delta^l = (W^l)' delta^{l+1},
  // gated by the hidden layer's ReLU.
  Vector dx = Vector::Ones(1), dy = Vector::Ones(1);
  double acc = 0.0;
  for (int l = h - 1; l >= 0; --l) {
    acc += dx.dot(dy) * ox[l].dot(oy[l]);
    if (l > 0) {
      dx = (mlp.weights[l].transpose() * dx).eval();
      dy = (mlp.weights[l].transpose() * dy).eval();
      for (int k = 0; k < dx.size(); ++k) {
        dx[k] *= relu_gate(vx[l][k]);
        dy[k] *= relu_gate(vy[l][k]);
      }
    }
  }
  return acc;
}

// A two-layer network in MLP form: Theta^0 = U, Theta^1 = w'.
inline MlpState to_mlp(const NetworkState& net) {
  MlpState mlp;
  mlp.sizes = {net.d, net.m, 1};
  mlp.weights.resize(2);
  mlp.weights[0] = net.U;
  mlp.weights[1] = net.w.transpose();
  mlp.require_valid();
  return mlp;
}

// ---------------------------------------------------------------------------
// Gram matrices.
// ---------------------------------------------------------------------------

enum class GramTag { K, K0part, K1part, H, K0closed, MLP };

inline std::string to_string(GramTag t) {
  switch (t) {
    case GramTag::K: return "K";
    case GramTag::K0part: return "K0part";
    case GramTag::K1part: return "K1part";
    case GramTag::H: return "H";
    case GramTag::K0closed: return "K0closed";
    case GramTag::MLP: return "MLP";
  }
  return "?";
}

struct GramMatrix {
  Matrix G;
  GramTag tag = GramTag::K;
  std::string provenance;
  double symmetry_defect = 0.0;

  int n() const { return static_cast<int>(G.rows()); }
  double trace() const { return G.trace(); }
};

namespace detail {

// Builds the full matrix from a pointwise evaluator (both triangles, in
// parallel over rows), records the worst asymmetry, and symmetrizes by
// averaging.  Asymmetry beyond 1e-8 of the largest entry means the evaluator
// itself is broken, which is an internal error rather than data noise.
template <typename Eval>
GramMatrix build_gram(int n, GramTag tag, std::string provenance, Eval&& eval) {
  GramMatrix gram;
  gram.tag = tag;
  gram.provenance = std::move(provenance);
  gram.G.resize(n, n);
  parallel_for(n, [&](std::int64_t i) {
    for (int j = 0; j < n; ++j) gram.G(i, j) = eval(static_cast<int>(i), j);
  });
  const double defect = (gram.G - gram.G.transpose()).cwiseAbs().maxCoeff();
  const double scale = gram.G.cwiseAbs().maxCoeff();
  if (defect > 1e-8 * std::max(scale, 1e-300))
    throw numeric_error("gram: asymmetric evaluator (defect " + std::to_string(defect) + ")");
  gram.symmetry_defect = defect;
  gram.G = ((gram.G + gram.G.transpose()) / 2.0).eval();
  return gram;
}

}  // namespace detail

// Gram of the network-form kernels.  Activations are precomputed once; the
// per-pair sums then run over neurons in a fixed order, so the result does
// not depend on the thread count.
inline GramMatrix gram(GramTag tag, const NetworkState& net, const Matrix& X,
                       std::string provenance = "network") {
  net.require_valid();
  if (!net.finite()) throw precondition_error("gram: network parameters must be finite");
  if (X.cols() != net.d) throw shape_error("gram: X has wrong column count");
  if (!X.allFinite()) throw shape_error("gram: X must be finite");
  const int n = static_cast<int>(X.rows());
  const Matrix A = X * net.U.transpose();  // n x m pre-activations
  const Matrix XX = X * X.transpose();
  const Vector w2 = net.w.cwiseProduct(net.w);
  auto entry = [&](int i, int j) {
    double acc = 0.0;
    switch (tag) {
      case GramTag::K:
        for (int k = 0; k < net.m; ++k)
          acc += relu(A(i, k)) * relu(A(j, k)) +
                 w2[k] * relu_gate(A(i, k)) * relu_gate(A(j, k)) * XX(i, j);
        break;
      case GramTag::K0part:
        for (int k = 0; k < net.m; ++k)
          acc += w2[k] * relu_gate(A(i, k)) * relu_gate(A(j, k)) * XX(i, j);
        break;
      case GramTag::K1part:
        for (int k = 0; k < net.m; ++k) acc += relu(A(i, k)) * relu(A(j, k));
        break;
      default:
        throw config_error("gram: tag " + to_string(tag) + " is not a network-form kernel");
    }
    return acc;
  };
  return detail::build_gram(n, tag, std::move(provenance), entry);
}

// Gram of the measure-form kernels (includes H).
inline GramMatrix gram(GramTag tag, const SignedAtomMeasure& mu, const Matrix& X,
                       std::string provenance = "measure") {
  if (!X.allFinite()) throw shape_error("gram: X must be finite");
  if (!mu.atoms.empty() && X.cols() != mu.dim())
    throw shape_error("gram: X has wrong column count");
  for (const auto& atom : mu.atoms)
    if (!atom.theta.allFinite())
      throw precondition_error("gram: measure atoms must be finite");
  const int n = static_cast<int>(X.rows());
  const int na = static_cast<int>(mu.atoms.size());
  Matrix A(n, na);  // pre-activations x_i' Theta_k
  Vector t2(na);
  for (int k = 0; k < na; ++k) {
    A.col(k) = X * mu.atoms[k].theta;
    t2[k] = mu.atoms[k].theta.squaredNorm();
  }
  const Matrix XX = X * X.transpose();
  const double mass = mu.mass;
  auto entry = [&](int i, int j) {
    double acc = 0.0;
    switch (tag) {
      case GramTag::K:
        for (int k = 0; k < na; ++k)
          acc += t2[k] * relu_gate(A(i, k)) * relu_gate(A(j, k)) * XX(i, j) +
                 relu(A(i, k)) * relu(A(j, k));
        break;
      case GramTag::K0part:
        for (int k = 0; k < na; ++k)
          acc += t2[k] * relu_gate(A(i, k)) * relu_gate(A(j, k)) * XX(i, j);
        break;
      case GramTag::K1part:
        for (int k = 0; k < na; ++k) acc += relu(A(i, k)) * relu(A(j, k));
        break;
      case GramTag::H:
        for (int k = 0; k < na; ++k) acc += t2[k] * relu(A(i, k)) * relu(A(j, k));
        break;
      default:
        throw config_error("gram: tag " + to_string(tag) + " is not a measure-form kernel");
    }
    return acc * mass;
  };
  return detail::build_gram(n, tag, std::move(provenance), entry);
}

// Gram of the closed-form initial kernel; rows of X must be unit vectors.
inline GramMatrix gram_k0_closed(const Matrix& X, std::string provenance = "closed-form") {
  const int n = static_cast<int>(X.rows());
  auto entry = [&](int i, int j) {
    return k0_closed_form(X.row(i).transpose(), X.row(j).transpose());
  };
  return detail::build_gram(n, GramTag::K0closed, std::move(provenance), entry);
}

inline GramMatrix gram(const MlpState& mlp, const Matrix& X, std::string provenance = "mlp") {
  mlp.require_valid();
  if (X.cols() != mlp.sizes.front()) throw shape_error("gram: X has wrong column count");
  const int n = static_cast<int>(X.rows());
  auto entry = [&](int i, int j) {
    return mlp_kernel(mlp, X.row(i).transpose(), X.row(j).transpose());
  };
  return detail::build_gram(n, GramTag::MLP, std::move(provenance), entry);
}

// ---------------------------------------------------------------------------
// Kernel ordering check: K >= K0 >= K1 >= H / D^2 in the PSD order, for any
// measure supported in the ball of radius D.  Verified on Gram matrices via
// the minimum eigenvalue of each difference.  The tolerance is relative to
// the trace of the K Gram: the differences themselves can be exactly zero
// (e.g. all atoms on a common sphere make K0 - K1-like differences
// degenerate), so their own traces are not a usable scale.
// ---------------------------------------------------------------------------
struct PsdChainReport {
  double min_eig_k_minus_k0 = 0.0;
  double min_eig_k0_minus_k1 = 0.0;
  double min_eig_k1_minus_h = 0.0;  // H scaled by 1/D^2
  double trace_k = 0.0;
  double threshold = 0.0;  // -1e-8 * trace_k
  bool pass = false;
};

inline PsdChainReport psd_chain_check(const SignedAtomMeasure& mu, const Matrix& X, double D) {
  double support = 0.0;
  for (const auto& a : mu.atoms) support = std::max(support, a.theta.norm());
  if (D < support) {
    std::ostringstream msg;
    msg << "psd_chain_check: D = " << D << " is smaller than the support radius " << support;
    throw precondition_error(msg.str());
  }
  const GramMatrix gk = gram(GramTag::K, mu, X);
  const GramMatrix g0 = gram(GramTag::K0part, mu, X);
  const GramMatrix g1 = gram(GramTag::K1part, mu, X);
  const GramMatrix gh = gram(GramTag::H, mu, X);
  auto min_eig = [](const Matrix& M) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(M, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) throw numeric_error("psd_chain_check: eigensolver failed");
    return solver.eigenvalues().minCoeff();
  };
  PsdChainReport report;
  report.min_eig_k_minus_k0 = min_eig(gk.G - g0.G);
  report.min_eig_k0_minus_k1 = min_eig(g0.G - g1.G);
  report.min_eig_k1_minus_h = min_eig(g1.G - gh.G / (D * D));
  report.trace_k = gk.trace();
  report.threshold = -1e-8 * report.trace_k;
  report.pass = report.min_eig_k_minus_k0 >= report.threshold &&
                report.min_eig_k0_minus_k1 >= report.threshold &&
                report.min_eig_k1_minus_h >= report.threshold;
  return report;
}

}  // namespace adaptive_kernel
