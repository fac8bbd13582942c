// Command implementations for the `adaptive-kernel` binary.  Each cmd_*
// function takes an already-merged configuration tree plus an output
// directory and returns a process exit code, so tests can drive complete
// invocations in process.  Exit codes: 0 success, 1 runtime failure
// (divergence, violated invariant), 2 configuration error.
#pragma once

#include "adaptive_kernel/common.hpp"
#include "adaptive_kernel/config.hpp"
#include "adaptive_kernel/dynamics.hpp"
#include "adaptive_kernel/experiments.hpp"
#include "adaptive_kernel/io.hpp"
#include "adaptive_kernel/kernels.hpp"
#include "adaptive_kernel/model.hpp"
#include "adaptive_kernel/spectral.hpp"
#include "adaptive_kernel/verify.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace adaptive_kernel {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

// Maps exceptions escaping a command onto the documented exit codes.
inline int guarded_run(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
}

inline InitSpec parse_init_spec(ConfigReader& r) {
  InitSpec spec;
  spec.scheme = init_scheme_from_string(r.get<std::string>("init.scheme", "balanced"));
  spec.seed = r.get<std::uint64_t>("init.seed", 1);
  spec.radius = r.get<double>("init.radius", 1.0);
  spec.m_plus = r.get<int>("init.m_plus", -1);
  spec.w_scale = r.get<double>("init.w_scale", 1.0);
  spec.u_scale = r.get<double>("init.u_scale", 1.0);
  return spec;
}

inline FlowConfig parse_flow_config(ConfigReader& r) {
  FlowConfig cfg;
  cfg.eta = r.get<double>("flow.eta", 0.0);
  cfg.max_steps = r.get<std::int64_t>("flow.max_steps", cfg.max_steps);
  cfg.lambda = r.get<double>("flow.lambda", 0.0);
  cfg.eps_grad = r.get<double>("flow.eps_grad", cfg.eps_grad);
  cfg.log_every = r.get<std::int64_t>("flow.log_every", cfg.log_every);
  const std::string loss = r.get<std::string>("flow.loss", "squared");
  if (loss == "squared") {
    cfg.loss = Loss{LossKind::Squared, 0.0};
  } else if (loss == "strongly-convex") {
    cfg.loss = Loss{LossKind::StronglyConvex, r.get<double>("flow.alpha", 0.1)};
  } else {
    throw config_error("flow.loss must be 'squared' or 'strongly-convex', got '" + loss + "'");
  }
  cfg.require_valid();
  return cfg;
}

inline ExperimentKind parse_data_kind(const std::string& kind) {
  if (kind == "teacher") return ExperimentKind::Teacher;
  if (kind == "random-label") return ExperimentKind::RandomLabel;
  if (kind == "csv") return ExperimentKind::Csv;
  throw config_error("data.kind must be 'teacher', 'random-label' or 'csv', got '" + kind +
                     "'");
}

// Builds the training set described by the [data] table.
inline Dataset parse_dataset(ConfigReader& r) {
  const ExperimentKind kind = parse_data_kind(r.get<std::string>("data.kind", "teacher"));
  const std::uint64_t seed = r.get<std::uint64_t>("data.seed", 42);
  switch (kind) {
    case ExperimentKind::Teacher: {
      const int n = r.get<int>("data.n", 50);
      const int d = r.get<int>("data.d", 5);
      const int J = r.get<int>("data.J", 2);
      return gen_teacher(n, d, J, seed).data;
    }
    case ExperimentKind::RandomLabel: {
      const int n = r.get<int>("data.n", 50);
      const int d = r.get<int>("data.d", 5);
      return gen_random_labels(n, d, seed);
    }
    case ExperimentKind::Csv: {
      const std::string path = r.require<std::string>("data.path");
      const int target = r.get<int>("data.target_column", 0);
      const bool normalize = r.get<bool>("data.normalize", true);
      return load_csv(path, target, normalize);
    }
  }
  throw config_error("unreachable data kind");
}

inline nlohmann::json flow_summary(const FlowResult& res, double resolved_eta) {
  nlohmann::json j;
  j["termination"] = to_string(res.termination);
  j["steps"] = res.steps;
  j["achieved_grad_norm"] = res.achieved_grad_norm;
  j["eta"] = resolved_eta;
  j["final_loss"] = res.log.records.empty() ? 0.0 : res.log.records.back().loss;
  j["max_balance_gap"] =
      res.log.records.empty() ? 0.0 : res.log.records.back().max_balance_gap;
  return j;
}

// train: run the discretized flow, persist trajectory + final network.
inline int cmd_train(const nlohmann::json& config, const std::filesystem::path& outdir) {
  ConfigReader r(config);
  Dataset data = parse_dataset(r);
  const int m = r.get<int>("model.m", 200);
  const InitSpec init = parse_init_spec(r);
  FlowConfig cfg = parse_flow_config(r);
  const bool dump_grams = r.get<bool>("output.grams", false);
  r.finalize();

  const NetworkState net0 = init_network(init, m, data.d());
  const double eta = cfg.eta > 0.0 ? cfg.eta : default_eta(data);
  cfg.eta = eta;
  const FlowResult res = run_flow(net0, data, cfg);

  std::filesystem::create_directories(outdir);
  atomic_write_text(outdir / "trajectory.csv", trajectory_csv(res.log));
  atomic_write_text(outdir / "network.json", to_json(res.net).dump(2) + "\n");
  nlohmann::json summary = flow_summary(res, eta);
  summary["config"] = config;
  atomic_write_text(outdir / "train.json", summary.dump(2) + "\n");
  if (dump_grams) {
    write_gram(outdir / "gram_k.csv", gram(GramTag::K, res.net, data.X, "trained-network"));
    write_gram(outdir / "gram_h.csv",
               gram(GramTag::H, to_signed_measure(res.net, true), data.X, "trained-network"));
  }
  std::printf("train: %s after %lld steps, grad_norm %.3e, eta %.3e\n",
              to_string(res.termination).c_str(), static_cast<long long>(res.steps),
              res.achieved_grad_norm, eta);
  return res.termination == Termination::Diverged ? kExitRuntime : kExitOk;
}

// spectrum: eigen-spectrum tracking along training.
inline int cmd_spectrum(const nlohmann::json& config, const std::filesystem::path& outdir) {
  ConfigReader r(config);
  ExperimentSpec spec;
  spec.kind = parse_data_kind(r.get<std::string>("data.kind", "teacher"));
  spec.experiment_id = r.get<std::string>("experiment.id", "spectrum");
  spec.n = r.get<int>("data.n", 50);
  spec.d = r.get<int>("data.d", 5);
  spec.J = r.get<int>("data.J", 2);
  spec.seed = r.get<std::uint64_t>("data.seed", 42);
  spec.csv_path = r.get<std::string>("data.path", "");
  spec.target_column = r.get<int>("data.target_column", 0);
  spec.normalize = r.get<bool>("data.normalize", true);
  spec.m = r.get<int>("model.m", 200);
  spec.init = parse_init_spec(r);
  spec.flow = parse_flow_config(r);
  spec.keep_fraction = r.get<double>("experiment.keep_fraction", 0.8);
  if (r.has("experiment.snapshot_steps")) {
    for (const auto& v : r.require_array("experiment.snapshot_steps"))
      spec.snapshot_steps.push_back(v.get<std::int64_t>());
  }
  r.finalize();
  spec.require_valid();

  const ExperimentResult res = run_spectrum_experiment(spec);
  write_experiment_outputs(outdir, spec, res);
  std::printf("spectrum: %s after %lld steps, %zu snapshots, stabilization %.3e\n",
              to_string(res.flow.termination).c_str(),
              static_cast<long long>(res.flow.steps), res.series.snapshots.size(),
              res.series.stabilization);
  return res.flow.termination == Termination::Diverged ? kExitRuntime : kExitOk;
}

// verify: run invariant suites, emit a machine-readable report.
inline int cmd_verify(const nlohmann::json& config, const std::filesystem::path& outdir) {
  ConfigReader r(config);
  std::vector<std::string> suites;
  if (r.has("suites")) {
    for (const auto& v : r.require_array("suites")) suites.push_back(v.get<std::string>());
  } else {
    suites = {"balance", "residual-ode", "psd-chain", "projection", "ridgeless"};
  }
  const std::uint64_t seed = r.get<std::uint64_t>("seed", 1);
  r.finalize();

  std::vector<VerifyRecord> records;
  for (const std::string& s : suites) {
    if (s == "balance") {
      BalanceSuiteParams p;
      p.seed = seed;
      auto recs = run_balance_suite(p);
      records.insert(records.end(), recs.begin(), recs.end());
    } else if (s == "residual-ode") {
      ResidualOdeSuiteParams p;
      p.seed = seed + 7;
      auto recs = run_residual_ode_suite(p);
      records.insert(records.end(), recs.begin(), recs.end());
    } else if (s == "psd-chain") {
      PsdSuiteParams p;
      p.seed = seed + 11;
      auto recs = run_psd_suite(p);
      records.insert(records.end(), recs.begin(), recs.end());
    } else if (s == "projection") {
      ProjectionSuiteParams p;
      p.seed = seed + 17;
      auto recs = run_projection_suite(p);
      records.insert(records.end(), recs.begin(), recs.end());
    } else if (s == "ridgeless") {
      RidgelessSuiteParams p;
      p.seed = seed + 23;
      auto recs = run_ridgeless_suite(p);
      records.insert(records.end(), recs.begin(), recs.end());
    } else {
      throw config_error("unknown verify suite '" + s + "'");
    }
  }

  bool all_hard_pass = true;
  nlohmann::json report = nlohmann::json::array();
  for (const auto& rec : records) {
    report.push_back(to_json(rec));
    if (rec.hard && !rec.pass) all_hard_pass = false;
    std::printf("[%s] %s/%s %s = %.6e (bound %.6e)%s\n", rec.pass ? "PASS" : "FAIL",
                rec.suite.c_str(), rec.instance.c_str(), rec.metric.c_str(), rec.value,
                rec.bound, rec.hard ? "" : " [soft]");
  }
  std::filesystem::create_directories(outdir);
  atomic_write_text(outdir / "report.json", report.dump(2) + "\n");
  std::printf("verify: %zu records, %s\n", records.size(),
              all_hard_pass ? "all hard checks passed" : "HARD CHECK FAILED");
  return all_hard_pass ? kExitOk : kExitRuntime;
}

// k0-table: closed form vs Monte Carlo for the init-time kernel on a grid of
// cosines, written as CSV and echoed to stdout.
inline int cmd_k0_table(const nlohmann::json& config, const std::filesystem::path& outdir) {
  ConfigReader r(config);
  const int grid = r.get<int>("grid", 21);
  const int samples = r.get<int>("samples", 100000);
  const std::uint64_t seed = r.get<std::uint64_t>("seed", 5);
  const int d = r.get<int>("d", 5);
  r.finalize();
  if (grid < 2) throw config_error("grid must be at least 2");
  if (d < 2) throw config_error("d must be at least 2 to span a plane of cosines");

  std::string csv = "t,closed_form,mc_estimate,mc_std_error\n";
  std::printf("%8s %14s %14s %12s\n", "t", "closed", "mc", "se");
  for (int i = 0; i < grid; ++i) {
    const double t = -1.0 + 2.0 * i / (grid - 1);
    Vector x = Vector::Zero(d), y = Vector::Zero(d);
    x[0] = 1.0;
    y[0] = t;
    y[1] = std::sqrt(std::max(0.0, 1.0 - t * t));
    const double closed = k0_closed_form(x, y);
    const McEstimate mc = k0_monte_carlo(x, y, samples, seed + i);
    csv += format_double(t) + "," + format_double(closed) + "," + format_double(mc.value) +
           "," + format_double(mc.std_error) + "\n";
    std::printf("%8.3f %14.9f %14.9f %12.3e\n", t, closed, mc.value, mc.std_error);
  }
  std::filesystem::create_directories(outdir);
  atomic_write_text(outdir / "k0_table.csv", csv);
  return kExitOk;
}

// ridge-compare: train at several ridge strengths and tabulate the held-out
// gap between the network and the kernel ridge interpolant it must match.
inline int cmd_ridge_compare(const nlohmann::json& config,
                             const std::filesystem::path& outdir) {
  ConfigReader r(config);
  const int n = r.get<int>("n", 20);
  const int d = r.get<int>("d", 5);
  const int m = r.get<int>("m", 100);
  const int J = r.get<int>("J", 2);
  const std::uint64_t seed = r.get<std::uint64_t>("seed", 3);
  const int grid_points = r.get<int>("grid", 32);
  std::vector<double> lambdas{1e-1, 1e-2, 1e-3};
  if (r.has("lambdas")) {
    lambdas.clear();
    for (const auto& v : r.require_array("lambdas")) lambdas.push_back(v.get<double>());
  }
  FlowConfig base = parse_flow_config(r);
  r.finalize();
  if (lambdas.empty()) throw config_error("lambdas must be non-empty");

  const TeacherData td = gen_teacher(n, d, J, seed);
  Rng grid_rng(seed + 99);
  Matrix grid(grid_points, d);
  for (int i = 0; i < grid_points; ++i)
    for (int k = 0; k < d; ++k) grid(i, k) = grid_rng.gaussian();
  const NetworkState net0 = init_network({InitScheme::BalancedFromMeasure, seed + 1}, m, d);

  std::string csv = "lambda,lambda_eff,steps,grad_norm,max_discrepancy,ratio_norm\n";
  bool diverged = false;
  std::printf("%10s %12s %10s %12s %16s %12s\n", "lambda", "lambda_eff", "steps", "grad_norm",
              "max_discrepancy", "ratio_norm");
  for (const double lambda : lambdas) {
    FlowConfig cfg = base;
    cfg.lambda = lambda;
    if (cfg.eta <= 0.0) cfg.eta = 0.05;
    const FlowResult res = run_flow(net0, td.data, cfg);
    diverged = diverged || res.termination == Termination::Diverged;
    const RidgelessReport rep =
        check_nn_equals_ridgeless(res.net, td.data, lambda, grid, true);
    const double gnorm = std::max(res.achieved_grad_norm, 1e-300);
    const double ratio_norm = rep.max_discrepancy * lambda / (m * gnorm);
    csv += format_double(lambda) + "," + format_double(rep.lambda_eff) + "," +
           std::to_string(res.steps) + "," + format_double(res.achieved_grad_norm) + "," +
           format_double(rep.max_discrepancy) + "," + format_double(ratio_norm) + "\n";
    std::printf("%10.1e %12.4e %10lld %12.3e %16.6e %12.3e\n", lambda, rep.lambda_eff,
                static_cast<long long>(res.steps), res.achieved_grad_norm,
                rep.max_discrepancy, ratio_norm);
  }
  std::filesystem::create_directories(outdir);
  atomic_write_text(outdir / "ridge_compare.csv", csv);
  return diverged ? kExitRuntime : kExitOk;
}

}  // namespace adaptive_kernel
