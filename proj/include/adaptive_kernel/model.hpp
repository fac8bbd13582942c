// Two-layer ReLU network state, its rescaled parameterization, the induced
// signed atom measure, and the initialization schemes.
//
// The network is f(x) = sum_j w_j * relu(x' u_j) with no biases.  The
// rescaled view theta_j = sqrt(m) w_j, Theta_j = sqrt(m) u_j is derived on
// demand and never stored, so the two views cannot disagree.
#pragma once

#include "adaptive_kernel/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

namespace adaptive_kernel {

inline double relu(double v) { return v > 0.0 ? v : 0.0; }

// The ReLU gate indicator.  The convention is gate = 1 at exactly 0: the
// subgradient choice is immaterial on continuous data (measure-zero event)
// but must be applied consistently across the forward pass, the velocity
// field, and every kernel evaluator.
inline double relu_gate(double v) { return v >= 0.0 ? 1.0 : 0.0; }

// ---------------------------------------------------------------------------
// NetworkState
// ---------------------------------------------------------------------------
struct NetworkState {
  int m = 0;  // neuron count
  int d = 0;  // input dimension
  Vector w;   // length m, second-layer weights
  Matrix U;   // m x d, rows are first-layer weights u_j

  NetworkState() = default;
  NetworkState(int m_, int d_) : m(m_), d(d_), w(Vector::Zero(m_)), U(Matrix::Zero(m_, d_)) {}

  // Rescaled view.
  double theta(int j) const { return std::sqrt(static_cast<double>(m)) * w[j]; }
  Vector big_theta(int j) const { return std::sqrt(static_cast<double>(m)) * U.row(j).transpose(); }

  bool finite() const { return w.allFinite() && U.allFinite(); }

  void require_valid() const {
    if (m < 1 || d < 1) throw shape_error("NetworkState: need m >= 1 and d >= 1");
    if (w.size() != m || U.rows() != m || U.cols() != d)
      throw shape_error("NetworkState: w/U dimensions disagree with (m, d)");
  }
};

// ---------------------------------------------------------------------------
// SignedAtomMeasure
// ---------------------------------------------------------------------------
struct SignedAtomMeasure {
  struct Atom {
    int sign;      // +1 or -1 (second-layer sign)
    Vector theta;  // rescaled direction Theta_j = sqrt(m) u_j
  };
  std::vector<Atom> atoms;
  double mass = 0.0;  // 1/m, shared by all atoms

  int dim() const { return atoms.empty() ? 0 : static_cast<int>(atoms.front().theta.size()); }

  // Total variation: mass * (number of atoms).
  double total_variation() const { return mass * static_cast<double>(atoms.size()); }

  // The function the measure represents: integral of |Theta| relu(x'Theta)
  // against the signed measure.  For a balanced network this reproduces the
  // forward pass.
  double integral(const Vector& x) const {
    double acc = 0.0;
    for (const auto& a : atoms)
      acc += static_cast<double>(a.sign) * a.theta.norm() * relu(x.dot(a.theta));
    return acc * mass;
  }
};

// ---------------------------------------------------------------------------
// InitSpec
// ---------------------------------------------------------------------------
enum class InitScheme { BalancedFromMeasure, GaussianRademacher, CustomUnbalanced };

inline std::string to_string(InitScheme s) {
  switch (s) {
    case InitScheme::BalancedFromMeasure: return "balanced-from-measure";
    case InitScheme::GaussianRademacher: return "gaussian-rademacher";
    case InitScheme::CustomUnbalanced: return "custom-unbalanced";
  }
  return "?";
}

inline InitScheme init_scheme_from_string(const std::string& s) {
  if (s == "balanced-from-measure" || s == "balanced") return InitScheme::BalancedFromMeasure;
  if (s == "gaussian-rademacher") return InitScheme::GaussianRademacher;
  if (s == "custom-unbalanced") return InitScheme::CustomUnbalanced;
  throw config_error("unknown init scheme: '" + s + "'");
}

struct InitSpec {
  InitScheme scheme = InitScheme::BalancedFromMeasure;
  std::uint64_t seed = 0;
  // balanced-from-measure: atoms are uniform on the sphere of this radius
  // (in the rescaled Theta coordinates), one sign class at a time.
  double radius = 1.0;
  // Split of the balanced scheme's atoms; -1 selects the default ceil(m/2).
  int m_plus = -1;
  // custom-unbalanced: independent Gaussian scales for w and the entries
  // of u (deliberately breaking |w_j| = |u_j|).
  double w_scale = 1.0;
  double u_scale = 1.0;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Builds a fresh network.  Deterministic given spec.seed.
inline NetworkState init_network(const InitSpec& spec, int m, int d) {
  if (m < 1 || d < 1) throw shape_error("init_network: need m >= 1 and d >= 1");
  NetworkState net(m, d);
  Rng rng(spec.seed);
  switch (spec.scheme) {
    case InitScheme::BalancedFromMeasure: {
      if (m < 2)
        throw config_error("balanced-from-measure needs m >= 2 (one atom per sign class)");
      if (spec.radius <= 0.0)
        throw config_error("balanced-from-measure: radius must be positive");
      const int m_plus = spec.m_plus >= 0 ? spec.m_plus : (m + 1) / 2;
      if (m_plus < 1 || m_plus > m - 1)
        throw config_error("balanced-from-measure: m_plus must leave both sign classes nonempty");
      const double root_m = std::sqrt(static_cast<double>(m));
      for (int j = 0; j < m; ++j) {
        // Sample Theta_j on the sphere, store u_j = Theta_j / sqrt(m), and
        // construct w_j from the stored u_j's norm so the balance gap is
        // exactly zero in floating point, not merely small.
        const Vector theta = rng.sphere(d, spec.radius);
        net.U.row(j) = (theta / root_m).transpose();
        const double sign = j < m_plus ? 1.0 : -1.0;
        net.w[j] = sign * net.U.row(j).norm();
      }
      break;
    }
    case InitScheme::GaussianRademacher: {
      const double root_m = std::sqrt(static_cast<double>(m));
      for (int j = 0; j < m; ++j) {
        net.w[j] = rng.rademacher() / root_m;
        for (int k = 0; k < d; ++k) net.U(j, k) = rng.gaussian() / root_m;
      }
      break;
    }
    case InitScheme::CustomUnbalanced: {
      if (spec.w_scale <= 0.0 || spec.u_scale <= 0.0)
        throw config_error("custom-unbalanced: scales must be positive");
      for (int j = 0; j < m; ++j) {
        net.w[j] = spec.w_scale * rng.gaussian();
        for (int k = 0; k < d; ++k) net.U(j, k) = spec.u_scale * rng.gaussian();
      }
      break;
    }
  }
  return net;
}

// Network output at a point.
inline double forward(const NetworkState& net, const Vector& x) {
  if (x.size() != net.d) throw shape_error("forward: x has wrong dimension");
  double acc = 0.0;
  for (int j = 0; j < net.m; ++j) acc += net.w[j] * relu(net.U.row(j).dot(x));
  return acc;
}

// Network outputs over the rows of X.
inline Vector forward_all(const NetworkState& net, const Matrix& X) {
  if (X.cols() != net.d) throw shape_error("forward_all: X has wrong column count");
  // relu applied to X U', then weighted by w: f_i = sum_j w_j relu(x_i' u_j).
  return (X * net.U.transpose()).cwiseMax(0.0) * net.w;
}

// Per-neuron balance gap g_j = theta_j^2 - |Theta_j|^2 = m (w_j^2 - |u_j|^2),
// evaluated as m (|w|-|u|)(|w|+|u|): algebraically identical, and exactly
// zero when w_j was constructed as sign * |u_j| (the factor |w|-|u| is then
// a bitwise zero).
inline Vector balance_gap(const NetworkState& net) {
  Vector g(net.m);
  for (int j = 0; j < net.m; ++j) {
    const double aw = std::abs(net.w[j]);
    const double au = net.U.row(j).norm();
    g[j] = static_cast<double>(net.m) * (aw - au) * (aw + au);
  }
  return g;
}

// Relative balance tolerance for neuron j: Euler drift is O(eta^2) per step
// and accumulates, so a small absolute floor plus a relative term in the
// atom's scale is required.
inline double balance_tolerance(const Vector& theta_j) {
  return 1e-6 * (1.0 + theta_j.squaredNorm());
}

// Extracts the signed atom measure rho = rho_+ - rho_- of a network:
// atoms Theta_j = sqrt(m) u_j with signs from the second layer, mass 1/m.
//
// Requires the balanced condition |w_j| = |u_j| within tolerance unless
// force is set, because only then does the measure determine the function.
inline SignedAtomMeasure to_signed_measure(const NetworkState& net, bool force = false) {
  net.require_valid();
  SignedAtomMeasure mu;
  mu.mass = 1.0 / static_cast<double>(net.m);
  mu.atoms.reserve(net.m);
  int worst = -1;
  double worst_excess = 0.0;
  for (int j = 0; j < net.m; ++j) {
    const Vector theta = net.big_theta(j);
    const double gap = std::abs(static_cast<double>(net.m) *
                                (std::abs(net.w[j]) - net.U.row(j).norm()) *
                                (std::abs(net.w[j]) + net.U.row(j).norm()));
    const double excess = gap - balance_tolerance(theta);
    if (excess > worst_excess) {
      worst_excess = excess;
      worst = j;
    }
    // sign(0) := +1; a dead neuron's atom carries zero direction anyway.
    mu.atoms.push_back({net.w[j] >= 0.0 ? +1 : -1, theta});
  }
  if (worst >= 0 && !force) {
    std::ostringstream msg;
    msg << "to_signed_measure: balance violated at neuron " << worst
        << " (|gap| exceeds tolerance by " << worst_excess
        << "); pass force=true to override";
    throw contract_error(msg.str());
  }
  return mu;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------
inline nlohmann::json to_json(const NetworkState& net) {
  nlohmann::json j;
  j["m"] = net.m;
  j["d"] = net.d;
  j["w"] = std::vector<double>(net.w.data(), net.w.data() + net.w.size());
  std::vector<std::vector<double>> rows(net.m);
  for (int r = 0; r < net.m; ++r) {
    rows[r].resize(net.d);
    for (int c = 0; c < net.d; ++c) rows[r][c] = net.U(r, c);
  }
  j["U"] = rows;
  return j;
}

inline NetworkState network_from_json(const nlohmann::json& j) {
  NetworkState net(j.at("m").get<int>(), j.at("d").get<int>());
  const auto w = j.at("w").get<std::vector<double>>();
  const auto U = j.at("U").get<std::vector<std::vector<double>>>();
  if (static_cast<int>(w.size()) != net.m || static_cast<int>(U.size()) != net.m)
    throw config_error("network JSON: w/U length disagrees with m");
  for (int r = 0; r < net.m; ++r) {
    if (static_cast<int>(U[r].size()) != net.d)
      throw config_error("network JSON: U row length disagrees with d");
    net.w[r] = w[r];
    for (int c = 0; c < net.d; ++c) net.U(r, c) = U[r][c];
  }
  net.require_valid();
  if (!net.finite()) throw config_error("network JSON: non-finite entries");
  return net;
}

}  // namespace adaptive_kernel
