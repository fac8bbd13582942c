// Discretized gradient flow on all network weights.
//
// Velocities are the negative gradients of the (optionally l2-regularized)
// empirical objective; the integrator is forward Euler.  The vector field is
// only piecewise smooth because of the ReLU gates, so higher-order
// integrators buy nothing across kink crossings and Euler keeps the exact
// gradient-descent interpretation.
#pragma once

#include "adaptive_kernel/common.hpp"
#include "adaptive_kernel/kernels.hpp"
#include "adaptive_kernel/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

namespace adaptive_kernel {

// ---------------------------------------------------------------------------
// Dataset: weighted empirical measure over (x, y) pairs.
// ---------------------------------------------------------------------------
struct Dataset {
  Matrix X;        // n x d
  Vector Y;        // n
  Vector weights;  // probability masses, default uniform 1/n

  Dataset() = default;
  Dataset(Matrix X_, Vector Y_) : X(std::move(X_)), Y(std::move(Y_)) {
    weights = Vector::Constant(X.rows(), 1.0 / static_cast<double>(X.rows()));
  }

  int n() const { return static_cast<int>(X.rows()); }
  int d() const { return static_cast<int>(X.cols()); }

  void require_valid() const {
    if (X.rows() < 1 || X.cols() < 1) throw shape_error("Dataset: need n >= 1 and d >= 1");
    if (Y.size() != X.rows() || weights.size() != X.rows())
      throw shape_error("Dataset: Y/weights length disagrees with X");
    if (!X.allFinite() || !Y.allFinite() || !weights.allFinite())
      throw shape_error("Dataset: non-finite entries");
    if (weights.minCoeff() < 0.0) throw shape_error("Dataset: negative weights");
    if (std::abs(weights.sum() - 1.0) > 1e-9)
      throw shape_error("Dataset: weights must sum to 1");
  }
};

// ---------------------------------------------------------------------------
// Loss.  "squared" is (1/2)(y-f)^2.  "strongly-convex" is the family
// (alpha/2)(f-y)^2 + log cosh(f-y), whose second derivative
// alpha + sech^2(f-y) certifies strong convexity with modulus alpha.
// ---------------------------------------------------------------------------
enum class LossKind { Squared, StronglyConvex };

struct Loss {
  LossKind kind = LossKind::Squared;
  double alpha = 1.0;  // strong-convexity modulus of the custom loss

  double value(double y, double f) const {
    const double r = f - y;
    if (kind == LossKind::Squared) return 0.5 * r * r;
    return 0.5 * alpha * r * r + std::log(std::cosh(r));
  }
  // d loss / d f.
  double derivative(double y, double f) const {
    const double r = f - y;
    if (kind == LossKind::Squared) return r;
    return alpha * r + std::tanh(r);
  }
};

// ---------------------------------------------------------------------------
// Flow configuration and trajectory log.
// ---------------------------------------------------------------------------
struct FlowConfig {
  double eta = 0.0;  // step size; <= 0 selects the default (see default_eta)
  std::int64_t max_steps = 10000;
  double lambda = 0.0;    // l2 coefficient
  double eps_grad = 1e-8;  // stationarity threshold on the full velocity norm
  Loss loss;
  std::int64_t log_every = 100;  // cadence of trajectory records

  void require_valid() const {
    if (max_steps < 0) throw config_error("FlowConfig: max_steps must be >= 0");
    if (lambda < 0.0) throw config_error("FlowConfig: lambda must be >= 0");
    if (eps_grad <= 0.0) throw config_error("FlowConfig: eps_grad must be > 0");
    if (log_every < 1) throw config_error("FlowConfig: log_every must be >= 1");
    if (loss.kind == LossKind::StronglyConvex && loss.alpha <= 0.0)
      throw config_error("FlowConfig: strongly convex loss needs alpha > 0");
  }
};

struct TrajectoryRecord {
  double t = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double max_balance_gap = 0.0;
  std::string spectrum_id;  // filled by the experiments layer
};

struct TrajectoryLog {
  std::vector<TrajectoryRecord> records;

  // Records must arrive in strictly increasing time order.
  void append(TrajectoryRecord r) {
    if (!records.empty() && r.t <= records.back().t)
      throw contract_error("TrajectoryLog: records must be strictly increasing in t");
    records.push_back(std::move(r));
  }
};

// ---------------------------------------------------------------------------
// Velocity field (negative objective gradient, including the l2 term).
// ---------------------------------------------------------------------------
struct Velocity {
  Vector w;  // length m
  Matrix U;  // m x d

  double squared_norm() const { return w.squaredNorm() + U.squaredNorm(); }
  double norm() const { return std::sqrt(squared_norm()); }
};

// dw_j = -E[ l'(y, f) relu(x'u_j) ] - (lambda/m) w_j
// du_j = -E[ l'(y, f) w_j gate(x'u_j) x ] - (lambda/m) u_j
inline Velocity grad(const NetworkState& net, const Dataset& data, double lambda,
                     const Loss& loss = Loss{}) {
  net.require_valid();
  data.require_valid();
  if (data.d() != net.d) throw shape_error("grad: dataset dimension disagrees with network");
  const Matrix A = data.X * net.U.transpose();  // n x m pre-activations
  const Vector f = A.cwiseMax(0.0) * net.w;
  Vector c(data.n());  // weight_i * l'(y_i, f_i)
  for (int i = 0; i < data.n(); ++i)
    c[i] = data.weights[i] * loss.derivative(data.Y[i], f[i]);
  Matrix gate(A.rows(), A.cols());
  for (int i = 0; i < A.rows(); ++i)
    for (int j = 0; j < A.cols(); ++j) gate(i, j) = relu_gate(A(i, j));
  const double reg = lambda / static_cast<double>(net.m);
  Velocity v;
  v.w = -(A.cwiseMax(0.0).transpose() * c) - reg * net.w;
  v.U = -(net.w.asDiagonal() * (gate.transpose() * (c.asDiagonal() * data.X))) - reg * net.U;
  return v;
}

// Scalar objective the flow descends: E[loss] + (lambda/2m) sum_j (w_j^2 + |u_j|^2).
inline double objective(const NetworkState& net, const Dataset& data, double lambda,
                        const Loss& loss = Loss{}) {
  const Vector f = forward_all(net, data.X);
  double acc = 0.0;
  for (int i = 0; i < data.n(); ++i) acc += data.weights[i] * loss.value(data.Y[i], f[i]);
  if (lambda > 0.0)
    acc += lambda / (2.0 * static_cast<double>(net.m)) *
           (net.w.squaredNorm() + net.U.squaredNorm());
  return acc;
}

// Carries the last finite state out of a blown-up trajectory.
struct divergence_error : numeric_error {
  NetworkState last_finite;
  explicit divergence_error(NetworkState state)
      : numeric_error("euler_step: non-finite update (diverged)"), last_finite(std::move(state)) {}
};

// One forward-Euler step: net' = net + eta * velocity.
inline NetworkState euler_step(const NetworkState& net, const Dataset& data,
                               const FlowConfig& cfg) {
  cfg.require_valid();
  if (cfg.eta <= 0.0) throw config_error("euler_step: eta must be resolved and positive");
  const Velocity v = grad(net, data, cfg.lambda, cfg.loss);
  NetworkState next = net;
  next.w += cfg.eta * v.w;
  next.U += cfg.eta * v.U;
  if (!next.finite()) throw divergence_error(net);
  return next;
}

// Default step size: a crude Lipschitz proxy from the width-limit kernel.
// The kernel scale is estimated from a fixed-width Gaussian-Rademacher
// network on the data itself; the largest Gram row sum bounds how fast the
// residual can move per unit time at early training.
inline double default_eta(const Dataset& data, std::uint64_t seed = 0x6b30u) {
  data.require_valid();
  const NetworkState probe =
      init_network({InitScheme::GaussianRademacher, seed}, 256, data.d());
  const GramMatrix g = gram(GramTag::K, probe, data.X, "eta probe");
  const double row_sum = g.G.cwiseAbs().rowwise().sum().maxCoeff();
  return 1e-2 / (1.0 + row_sum);
}

enum class Termination { Stationary, MaxSteps, Diverged };

inline std::string to_string(Termination t) {
  switch (t) {
    case Termination::Stationary: return "stationary";
    case Termination::MaxSteps: return "max_steps";
    case Termination::Diverged: return "diverged";
  }
  return "?";
}

struct FlowResult {
  NetworkState net;
  TrajectoryLog log;
  Termination termination = Termination::MaxSteps;
  std::int64_t steps = 0;
  double achieved_grad_norm = 0.0;
};

// Runs the flow until stationarity (velocity norm, including the l2 term,
// below eps_grad), the step budget, or divergence.  Deterministic given its
// inputs.  A user hook sees (step index, state) at every logged step; the
// experiments layer uses it to snapshot spectra.
template <typename Hook>
FlowResult run_flow_hooked(const NetworkState& net0, const Dataset& data, FlowConfig cfg,
                           Hook&& hook) {
  cfg.require_valid();
  data.require_valid();
  if (cfg.eta <= 0.0) cfg.eta = default_eta(data);
  FlowResult result;
  result.net = net0;
  std::int64_t step = 0;
  auto log_state = [&](double gnorm) {
    TrajectoryRecord rec;
    rec.t = static_cast<double>(step) * cfg.eta;
    rec.loss = objective(result.net, data, cfg.lambda, cfg.loss);
    rec.grad_norm = gnorm;
    rec.max_balance_gap = balance_gap(result.net).cwiseAbs().maxCoeff();
    rec.spectrum_id = hook(step, result.net);
    result.log.append(std::move(rec));
  };
  while (true) {
    const Velocity v = grad(result.net, data, cfg.lambda, cfg.loss);
    const double gnorm = v.norm();
    result.achieved_grad_norm = gnorm;
    const bool stationary = gnorm < cfg.eps_grad;
    const bool exhausted = step >= cfg.max_steps;
    if (stationary || exhausted || step % cfg.log_every == 0) log_state(gnorm);
    if (stationary) {
      result.termination = Termination::Stationary;
      break;
    }
    if (exhausted) {
      result.termination = Termination::MaxSteps;
      break;
    }
    NetworkState next = result.net;
    next.w += cfg.eta * v.w;
    next.U += cfg.eta * v.U;
    if (!next.finite()) {
      result.termination = Termination::Diverged;
      break;
    }
    result.net = std::move(next);
    ++step;
  }
  result.steps = step;
  return result;
}

inline FlowResult run_flow(const NetworkState& net0, const Dataset& data, const FlowConfig& cfg) {
  return run_flow_hooked(net0, data, cfg,
                         [](std::int64_t, const NetworkState&) { return std::string(); });
}

// ---------------------------------------------------------------------------
// Residual view.
// ---------------------------------------------------------------------------
// For the squared loss the stored residual is y_i - f(x_i) (the approximation
// error f* - f at the sample); for a general loss it is d loss / d f, per the
// generalized residual convention.  Quadratic forms in the residual are
// insensitive to the sign flip between the two.
inline Vector residual(const NetworkState& net, const Dataset& data, const Loss& loss = Loss{}) {
  const Vector f = forward_all(net, data.X);
  Vector delta(data.n());
  for (int i = 0; i < data.n(); ++i)
    delta[i] = loss.kind == LossKind::Squared ? data.Y[i] - f[i]
                                              : loss.derivative(data.Y[i], f[i]);
  return delta;
}

// ---------------------------------------------------------------------------
// Residual ODE check: d E[Delta^2 / 2] / dt = -Delta' W K(X,X) W Delta.
// ---------------------------------------------------------------------------
struct ResidualOdeReport {
  double lhs = 0.0;      // finite-difference derivative across one Euler step
  double rhs = 0.0;      // -Delta' W K W Delta
  double rel_err = 0.0;  // |lhs - rhs| / max(|rhs|, floor)
};

// The identity assumes the velocity field is differentiable along the step,
// so samples near an activation boundary x_i'u_j = 0 are excluded by a guard
// band (training itself never needs this; only the check does).
inline void require_guard_band(const NetworkState& net, const Dataset& data,
                               double band_scale = 1e-3) {
  for (int i = 0; i < data.n(); ++i) {
    const double xn = data.X.row(i).norm();
    for (int j = 0; j < net.m; ++j) {
      const double margin = std::abs(data.X.row(i).dot(net.U.row(j)));
      const double band = band_scale * xn * net.U.row(j).norm();
      if (margin < band) {
        std::ostringstream msg;
        msg << "guard band violated at sample " << i << ", neuron " << j << " (|x'u| = "
            << margin << " < " << band << ")";
        throw precondition_error(msg.str());
      }
    }
  }
}

inline ResidualOdeReport check_residual_ode(const NetworkState& net, const Dataset& data,
                                            double eta) {
  net.require_valid();
  data.require_valid();
  require_guard_band(net, data);
  FlowConfig cfg;
  cfg.eta = eta;
  cfg.lambda = 0.0;
  const Vector delta = residual(net, data);
  auto half_msq = [&](const NetworkState& state) {
    const Vector r = residual(state, data);
    double acc = 0.0;
    for (int i = 0; i < data.n(); ++i) acc += data.weights[i] * 0.5 * r[i] * r[i];
    return acc;
  };
  const NetworkState next = euler_step(net, data, cfg);
  ResidualOdeReport report;
  report.lhs = (half_msq(next) - half_msq(net)) / eta;
  const GramMatrix gk = gram(GramTag::K, net, data.X, "residual ode");
  const Vector wd = data.weights.cwiseProduct(delta);
  report.rhs = -wd.dot(gk.G * wd);
  report.rel_err = std::abs(report.lhs - report.rhs) / std::max(std::abs(report.rhs), 1e-300);
  return report;
}

}  // namespace adaptive_kernel
