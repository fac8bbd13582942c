// Invariant suites behind the `verify` subcommand.  Each suite runs a small,
// seeded, self-contained scenario and emits records that either pass or fail
// against pinned bounds; soft records only warn.
#pragma once

#include "adaptive_kernel/common.hpp"
#include "adaptive_kernel/dynamics.hpp"
#include "adaptive_kernel/experiments.hpp"
#include "adaptive_kernel/io.hpp"
#include "adaptive_kernel/kernels.hpp"
#include "adaptive_kernel/model.hpp"
#include "adaptive_kernel/spectral.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace adaptive_kernel {

struct VerifyRecord {
  std::string suite;
  std::string instance;
  std::string metric;
  double value = 0.0;
  double bound = 0.0;
  bool pass = false;
  bool hard = true;
  std::string note;
};

inline nlohmann::json to_json(const VerifyRecord& r) {
  return nlohmann::json{{"suite", r.suite},   {"instance", r.instance}, {"metric", r.metric},
                        {"value", r.value},   {"bound", r.bound},       {"pass", r.pass},
                        {"hard", r.hard},     {"note", r.note}};
}

// Least-squares slope of y against x.
inline double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw shape_error("fit_slope: need two aligned samples");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) throw numeric_error("fit_slope: degenerate abscissae");
  return (n * sxy - sx * sy) / denom;
}

// ---------------------------------------------------------------------------
// balance: drift of the balance gap under the unregularized flow is first
// order in the step size, and the regularized flow contracts the gap at the
// exact per-step factor (1 - eta lambda / m)^2, i.e. rate 2 lambda / m in
// continuous time.  (Both layers feel the same -lambda/m pull, so the gap
// theta^2 - |Theta|^2 decays with twice that exponent; see README.)
// ---------------------------------------------------------------------------
struct BalanceSuiteParams {
  int n = 50, d = 5, m = 200;
  std::uint64_t seed = 1;
  std::int64_t steps = 2000;
  double lambda = 0.1;  // decay instance
  int decay_m = 50;
};

// Max |balance gap| over a same-total-time trajectory at the given step size.
inline double max_gap_drift(const NetworkState& net0, const Dataset& data, double eta,
                            std::int64_t steps) {
  FlowConfig cfg;
  cfg.eta = eta;
  cfg.max_steps = steps;
  cfg.eps_grad = 1e-300;  // never declare stationarity; this measures drift
  cfg.log_every = 1;
  const FlowResult res = run_flow(net0, data, cfg);
  double worst = 0.0;
  for (const auto& r : res.log.records) worst = std::max(worst, r.max_balance_gap);
  return worst;
}

// Fits the exponential rate of max_j |gap_j| along a regularized trajectory,
// with one step-halving Richardson extrapolation to strip the O(eta) bias.
inline double fitted_decay_rate(const NetworkState& net0, const Dataset& data, double lambda,
                                double eta, std::int64_t steps) {
  auto slope_at = [&](double step_size, std::int64_t nsteps) {
    FlowConfig cfg;
    cfg.eta = step_size;
    cfg.max_steps = nsteps;
    cfg.lambda = lambda;
    cfg.eps_grad = 1e-300;
    cfg.log_every = std::max<std::int64_t>(1, nsteps / 200);
    const FlowResult res = run_flow(net0, data, cfg);
    std::vector<double> t, lg;
    for (const auto& r : res.log.records) {
      if (r.max_balance_gap <= 0.0) continue;
      t.push_back(r.t);
      lg.push_back(std::log(r.max_balance_gap));
    }
    return -fit_slope(t, lg);  // decay rate is minus the log-slope
  };
  const double r1 = slope_at(eta, steps);
  const double r2 = slope_at(eta / 2.0, steps * 2);
  return 2.0 * r2 - r1;
}

inline std::vector<VerifyRecord> run_balance_suite(const BalanceSuiteParams& p) {
  std::vector<VerifyRecord> out;

  // Drift instance: balanced init, lambda = 0.
  const Dataset data = gen_random_labels(p.n, p.d, p.seed);
  const NetworkState net0 =
      init_network({InitScheme::BalancedFromMeasure, p.seed + 1}, p.m, p.d);
  const double eta = default_eta(data);
  const double drift_full = max_gap_drift(net0, data, eta, p.steps);
  const double drift_half = max_gap_drift(net0, data, eta / 2.0, p.steps * 2);
  const double ratio = drift_full / std::max(drift_half, 1e-300);
  out.push_back({"balance", "drift", "max_abs_gap_at_default_eta", drift_full, 1e-3,
                 drift_full < 1e-3, true, "balanced init must stay balanced up to O(eta)"});
  out.push_back({"balance", "drift", "eta_halving_ratio", ratio, 2.3,
                 ratio >= 1.7 && ratio <= 2.3, true,
                 "drift is first order: halving eta over the same total time halves it"});

  // Decay instance: unbalanced init, lambda > 0, regularization isolated by
  // a dataset the network fits identically (x = 0, y = 0).
  Dataset null_data(Matrix::Zero(1, p.d), Vector::Zero(1));
  const NetworkState unb =
      init_network({InitScheme::CustomUnbalanced, p.seed + 2}, p.decay_m, p.d);
  const double rate = fitted_decay_rate(unb, null_data, p.lambda, 0.01, 40000);
  const double target = 2.0 * p.lambda / static_cast<double>(p.decay_m);
  const double rel = std::abs(rate - target) / target;
  out.push_back({"balance", "regularized-decay", "fitted_rate_rel_err_vs_2lambda_over_m", rel,
                 0.02, rel < 0.02, true,
                 "gap contracts per step by (1 - eta*lambda/m)^2; continuous rate 2*lambda/m"});
  return out;
}

// ---------------------------------------------------------------------------
// residual-ode
// ---------------------------------------------------------------------------
struct ResidualOdeSuiteParams {
  int count = 20, n = 8, m = 5, d = 3;
  std::uint64_t seed = 7;
  double eta = 1e-6;
};

// Draws a random (net, data) instance away from activation boundaries.
inline std::pair<NetworkState, Dataset> guarded_instance(int n, int m, int d,
                                                         std::uint64_t seed) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng(seed + attempt * 0x9e37u);
    NetworkState net(m, d);
    for (int j = 0; j < m; ++j) {
      net.w[j] = rng.gaussian();
      for (int k = 0; k < d; ++k) net.U(j, k) = rng.gaussian();
    }
    Matrix X(n, d);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < d; ++k) X(i, k) = rng.gaussian();
    Vector Y(n);
    for (int i = 0; i < n; ++i) Y[i] = rng.rademacher();
    Dataset data(std::move(X), std::move(Y));
    try {
      require_guard_band(net, data);
    } catch (const precondition_error&) {
      continue;  // resample; the guard band is a precondition, not a failure
    }
    return {std::move(net), std::move(data)};
  }
}

inline std::vector<VerifyRecord> run_residual_ode_suite(const ResidualOdeSuiteParams& p) {
  std::vector<VerifyRecord> out;
  double worst_rel = 0.0;
  double ratio_sum = 0.0;
  for (int k = 0; k < p.count; ++k) {
    auto [net, data] = guarded_instance(p.n, p.m, p.d, p.seed + 1000 * k);
    const ResidualOdeReport full = check_residual_ode(net, data, p.eta);
    const ResidualOdeReport half = check_residual_ode(net, data, p.eta / 2.0);
    worst_rel = std::max(worst_rel, full.rel_err);
    ratio_sum += half.rel_err / std::max(full.rel_err, 1e-300);
    out.push_back({"residual-ode", "instance-" + std::to_string(k), "rel_err", full.rel_err,
                   1e-3, full.rel_err < 1e-3, true, ""});
  }
  const double mean_ratio = ratio_sum / p.count;
  out.push_back({"residual-ode", "aggregate", "mean_eta_halving_ratio", mean_ratio, 0.7,
                 mean_ratio > 0.3 && mean_ratio < 0.7, true,
                 "first-order identity: halving eta roughly halves the defect"});
  return out;
}

// ---------------------------------------------------------------------------
// psd-chain
// ---------------------------------------------------------------------------
struct PsdSuiteParams {
  int count = 50;
  std::uint64_t seed = 11;
  int max_m = 100, max_n = 50, max_d = 10;
};

inline std::vector<VerifyRecord> run_psd_suite(const PsdSuiteParams& p) {
  std::vector<VerifyRecord> out;
  for (int k = 0; k < p.count; ++k) {
    Rng rng(p.seed + 31 * k);
    const int m = 1 + static_cast<int>(rng.raw() % p.max_m);
    const int n = 2 + static_cast<int>(rng.raw() % (p.max_n - 1));
    const int d = 1 + static_cast<int>(rng.raw() % p.max_d);
    const double scale = 0.5 + 1.5 * rng.uniform();
    SignedAtomMeasure mu;
    mu.mass = 1.0 / m;
    for (int j = 0; j < m; ++j)
      mu.atoms.push_back({rng.rademacher() > 0 ? +1 : -1, rng.gaussian_vector(d, scale)});
    Matrix X(n, d);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < d; ++c) X(i, c) = rng.gaussian();
    double support = 0.0;
    for (const auto& a : mu.atoms) support = std::max(support, a.theta.norm());
    const double D = support * (1.0 + rng.uniform());
    const PsdChainReport rep = psd_chain_check(mu, X, D);
    const double worst = std::min({rep.min_eig_k_minus_k0, rep.min_eig_k0_minus_k1,
                                   rep.min_eig_k1_minus_h});
    out.push_back({"psd-chain", "instance-" + std::to_string(k), "worst_min_eigenvalue", worst,
                   rep.threshold, rep.pass, true,
                   "bound is -1e-8 * trace of the K Gram (m=" + std::to_string(m) +
                       ", n=" + std::to_string(n) + ", d=" + std::to_string(d) + ")"});
  }
  return out;
}

// ---------------------------------------------------------------------------
// projection (stationarity checks on a trained network)
// ---------------------------------------------------------------------------
struct ProjectionSuiteParams {
  int n = 10, d = 3, m = 40, J = 2;
  std::uint64_t seed = 17;
  double eps_grad = 1e-8;
  double eta = 0.05;
  std::int64_t max_steps = 2000000;
};

inline std::vector<VerifyRecord> run_projection_suite(const ProjectionSuiteParams& p) {
  std::vector<VerifyRecord> out;
  const TeacherData td = gen_teacher(p.n, p.d, p.J, p.seed);
  const NetworkState net0 =
      init_network({InitScheme::BalancedFromMeasure, p.seed + 1}, p.m, p.d);
  FlowConfig cfg;
  cfg.eta = p.eta;
  cfg.max_steps = p.max_steps;
  cfg.eps_grad = p.eps_grad;
  cfg.log_every = 100000;
  const FlowResult res = run_flow(net0, td.data, cfg);
  const bool stationary = res.termination == Termination::Stationary;
  out.push_back({"projection", "training", "achieved_grad_norm", res.achieved_grad_norm,
                 p.eps_grad, stationary, true, "must reach declared stationarity"});
  if (stationary) {
    const SignedAtomMeasure mu = to_signed_measure(res.net, true);
    const ProjectionReport proj =
        check_projection_optimality(res.net, td.data, mu, p.eps_grad);
    out.push_back({"projection", "atoms", "max_abs_r", proj.max_abs_r, proj.bound, proj.pass,
                   true, "scale = sqrt(m) * max_j |Theta_j|"});
    const KernelNullReport null = check_kernel_null(res.net, td.data, p.eps_grad);
    out.push_back({"projection", "kernel-null", "residual_quadratic_form", null.quad_form,
                   null.bound, null.pass, true,
                   "Delta' W K W Delta equals the squared velocity norm"});
  }
  return out;
}

// ---------------------------------------------------------------------------
// ridgeless (stationary regularized network vs kernel ridge)
// ---------------------------------------------------------------------------
struct RidgelessSuiteParams {
  int n = 10, d = 3, m = 40, J = 2;
  std::uint64_t seed = 23;
  std::vector<double> lambdas{1e-1, 1e-2};
  double eps_grad = 1e-7;
  double eta = 0.05;
  std::int64_t max_steps = 5000000;
  int grid_points = 32;
};

inline std::vector<VerifyRecord> run_ridgeless_suite(const RidgelessSuiteParams& p) {
  std::vector<VerifyRecord> out;
  const TeacherData td = gen_teacher(p.n, p.d, p.J, p.seed);
  Rng grid_rng(p.seed + 99);
  Matrix grid(p.grid_points, p.d);
  for (int i = 0; i < p.grid_points; ++i)
    for (int k = 0; k < p.d; ++k) grid(i, k) = grid_rng.gaussian();
  const NetworkState net0 =
      init_network({InitScheme::BalancedFromMeasure, p.seed + 1}, p.m, p.d);

  // The held-out discrepancy inherits a factor m/lambda from resolving the
  // second-layer stationarity condition, so the stable cross-lambda constant
  // is kappa = disc * lambda / (m * achieved_grad_norm).  kappa is fitted on
  // the first lambda and every run must stay inside a 10x band around it; the
  // bound is scale-free in the achieved gradient norm, so exhausting
  // max_steps at a gate-chatter floor only loosens it honestly.
  double kappa_first = -1.0;
  for (const double lambda : p.lambdas) {
    FlowConfig cfg;
    cfg.eta = p.eta;
    cfg.max_steps = p.max_steps;
    cfg.lambda = lambda;
    cfg.eps_grad = p.eps_grad;
    cfg.log_every = 1000000;
    const FlowResult res = run_flow(net0, td.data, cfg);
    const RidgelessReport rep =
        check_nn_equals_ridgeless(res.net, td.data, lambda, grid, true);
    const double gnorm = std::max(res.achieved_grad_norm, 1e-300);
    const double kappa = rep.max_discrepancy * lambda / (p.m * gnorm);
    if (kappa_first < 0.0) kappa_first = kappa;
    char tag_buf[32];
    std::snprintf(tag_buf, sizeof(tag_buf), "lambda-%.0e", lambda);
    const std::string tag = tag_buf;
    const double bound = 10.0 * kappa_first * p.m / lambda * gnorm;
    out.push_back({"ridgeless", tag, "max_discrepancy", rep.max_discrepancy, bound,
                   rep.max_discrepancy <= bound, true,
                   "grad_norm " + format_double(gnorm) + ", termination " +
                       to_string(res.termination)});
    out.push_back({"ridgeless", tag, "kappa", kappa, 10.0 * kappa_first,
                   kappa <= 10.0 * kappa_first && kappa >= kappa_first / 10.0, true,
                   "kappa = disc * lambda / (m * grad_norm), fitted at the first lambda"});
  }
  return out;
}

}  // namespace adaptive_kernel
