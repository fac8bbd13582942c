// Desk-scale spectrum-tracking experiments: well-specified teacher networks,
// random-label interpolation, and external-CSV regression.  Each run trains
// a network, snapshots the eigenvalues of the training-induced kernel's Gram
// matrix on a schedule, and emits CSV artifacts.
#pragma once

#include "adaptive_kernel/common.hpp"
#include "adaptive_kernel/dynamics.hpp"
#include "adaptive_kernel/io.hpp"
#include "adaptive_kernel/kernels.hpp"
#include "adaptive_kernel/model.hpp"
#include "adaptive_kernel/spectral.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace adaptive_kernel {

// ---------------------------------------------------------------------------
// Data generators.
// ---------------------------------------------------------------------------

struct TeacherData {
  Dataset data;
  NetworkState teacher;
};

// X rows are isotropic standard Gaussian; the teacher is a J-neuron network
// with standard-normal entries in both layers (any scale works by positive
// homogeneity; unit scale keeps the labels O(1)); labels are noiseless.
inline TeacherData gen_teacher(int n, int d, int J, std::uint64_t seed) {
  if (n < 1 || d < 1 || J < 1) throw config_error("gen_teacher: need n, d, J >= 1");
  Rng rng(seed);
  Matrix X(n, d);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < d; ++k) X(i, k) = rng.gaussian();
  NetworkState teacher(J, d);
  for (int j = 0; j < J; ++j) {
    teacher.w[j] = rng.gaussian();
    for (int k = 0; k < d; ++k) teacher.U(j, k) = rng.gaussian();
  }
  TeacherData out;
  out.data = Dataset(std::move(X), Vector());
  out.data.Y = forward_all(teacher, out.data.X);
  out.teacher = std::move(teacher);
  return out;
}

// X rows isotropic Gaussian, labels independent +/-1 coin flips.
inline Dataset gen_random_labels(int n, int d, std::uint64_t seed) {
  if (n < 1 || d < 1) throw config_error("gen_random_labels: need n, d >= 1");
  Rng rng(seed);
  Matrix X(n, d);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < d; ++k) X(i, k) = rng.gaussian();
  Vector Y(n);
  for (int i = 0; i < n; ++i) Y[i] = rng.rademacher();
  return Dataset(std::move(X), std::move(Y));
}

// Rectangular numeric CSV with a header row.  target_column indexes the
// header (0-based).  With normalize set, every feature column is z-scored
// against its population statistics.  Parse failures name the file row
// (1-based, header = row 1) and column (1-based).
inline Dataset load_csv(const std::filesystem::path& path, int target_column, bool normalize) {
  std::ifstream in(path);
  if (!in) throw config_error("load_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw config_error("load_csv: empty file " + path.string());
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(s);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!s.empty() && s.back() == ',') cells.push_back("");
    return cells;
  };
  const std::size_t ncols = split(line).size();
  if (target_column < 0 || static_cast<std::size_t>(target_column) >= ncols)
    throw config_error("load_csv: target column " + std::to_string(target_column) +
                       " out of range (file has " + std::to_string(ncols) + " columns)");
  std::vector<std::vector<double>> rows;
  int file_row = 1;
  while (std::getline(in, line)) {
    ++file_row;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != ncols) {
      std::ostringstream msg;
      msg << "load_csv: ragged row " << file_row << " (expected " << ncols << " cells, got "
          << cells.size() << ")";
      throw config_error(msg.str());
    }
    std::vector<double> vals(ncols);
    for (std::size_t c = 0; c < ncols; ++c) {
      try {
        std::size_t used = 0;
        vals[c] = std::stod(cells[c], &used);
        if (used != cells[c].size()) throw std::invalid_argument("trailing junk");
      } catch (const std::exception&) {
        std::ostringstream msg;
        msg << "load_csv: non-numeric cell at row " << file_row << ", col " << (c + 1)
            << " ('" << cells[c] << "')";
        throw config_error(msg.str());
      }
    }
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw config_error("load_csv: no data rows in " + path.string());
  const int n = static_cast<int>(rows.size());
  const int d = static_cast<int>(ncols) - 1;
  if (d < 1) throw config_error("load_csv: need at least one feature column");
  Matrix X(n, d);
  Vector Y(n);
  for (int i = 0; i < n; ++i) {
    int k = 0;
    for (std::size_t c = 0; c < ncols; ++c) {
      if (static_cast<int>(c) == target_column)
        Y[i] = rows[i][c];
      else
        X(i, k++) = rows[i][c];
    }
  }
  if (normalize) {
    for (int k = 0; k < d; ++k) {
      const double mean = X.col(k).mean();
      X.col(k).array() -= mean;
      const double var = X.col(k).squaredNorm() / static_cast<double>(n);
      if (var > 0.0) X.col(k) /= std::sqrt(var);
    }
  }
  return Dataset(std::move(X), std::move(Y));
}

// ---------------------------------------------------------------------------
// Experiment descriptions and spectrum series.
// ---------------------------------------------------------------------------

enum class ExperimentKind { Teacher, RandomLabel, Csv };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::Teacher: return "teacher";
    case ExperimentKind::RandomLabel: return "random-label";
    case ExperimentKind::Csv: return "csv";
  }
  return "?";
}

inline ExperimentKind experiment_kind_from_string(const std::string& s) {
  if (s == "teacher") return ExperimentKind::Teacher;
  if (s == "random-label") return ExperimentKind::RandomLabel;
  if (s == "csv") return ExperimentKind::Csv;
  throw config_error("unknown experiment kind: '" + s + "'");
}

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::Teacher;
  std::string experiment_id = "experiment";
  int n = 50;
  int d = 5;
  int m = 200;
  int J = 2;  // teacher width
  std::uint64_t seed = 0;
  InitSpec init;
  FlowConfig flow;
  std::vector<std::int64_t> snapshot_steps;  // empty selects the default
  double keep_fraction = 0.8;
  // csv kind only:
  std::string csv_path;
  int target_column = 0;
  bool normalize = true;

  void require_valid() const {
    if (keep_fraction <= 0.0 || keep_fraction > 1.0)
      throw config_error("ExperimentSpec: keep_fraction must lie in (0, 1]");
    for (std::size_t i = 1; i < snapshot_steps.size(); ++i)
      if (snapshot_steps[i] <= snapshot_steps[i - 1])
        throw config_error("ExperimentSpec: snapshot schedule must be strictly increasing");
    if (!snapshot_steps.empty() && snapshot_steps.front() < 0)
      throw config_error("ExperimentSpec: snapshot steps must be >= 0");
  }
};

// Default schedule: geometric in step count, {0, 10, 100, ...} up to
// max_steps, densified with half-decade points to keep stabilization
// estimates from straddling whole decades.
inline std::vector<std::int64_t> default_snapshot_steps(std::int64_t max_steps) {
  std::vector<std::int64_t> steps{0};
  for (std::int64_t base = 10; base <= max_steps; base *= 10) {
    steps.push_back(base);
    const std::int64_t half = base * 5;
    if (half <= max_steps) steps.push_back(half);
  }
  if (steps.back() != max_steps) steps.push_back(max_steps);
  std::sort(steps.begin(), steps.end());
  steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
  return steps;
}

struct SpectrumSnapshot {
  std::int64_t step = 0;
  double t = 0.0;
  std::string id;
  Vector eigenvalues;  // descending, truncated to the keep fraction
};

struct SpectrumSeries {
  std::string experiment_id;
  std::vector<SpectrumSnapshot> snapshots;
  // Max relative change per kept index between the last two snapshots.
  double stabilization = std::numeric_limits<double>::infinity();
};

inline double snapshot_relative_change(const Vector& prev, const Vector& last) {
  const int k = static_cast<int>(std::min(prev.size(), last.size()));
  double worst = 0.0;
  for (int i = 0; i < k; ++i)
    worst = std::max(worst, std::abs(last[i] - prev[i]) / (std::abs(prev[i]) + 1e-12));
  return worst;
}

// First snapshot time from which every consecutive relative change stays
// below the threshold; +inf when the series never settles.
inline double stabilization_time(const SpectrumSeries& series, double threshold = 0.05) {
  const auto& s = series.snapshots;
  for (std::size_t k = 1; k < s.size(); ++k) {
    bool settled = true;
    for (std::size_t j = k; j < s.size(); ++j) {
      if (snapshot_relative_change(s[j - 1].eigenvalues, s[j].eigenvalues) >= threshold) {
        settled = false;
        break;
      }
    }
    if (settled) return s[k].t;
  }
  return std::numeric_limits<double>::infinity();
}

struct ExperimentResult {
  Dataset data;
  FlowResult flow;
  SpectrumSeries series;
  double resolved_eta = 0.0;
  std::vector<std::int64_t> resolved_schedule;
};

// Trains as configured and records the top keep-fraction of the K-Gram
// spectrum at every scheduled step, plus the final step.  On divergence the
// partial series is retained and the termination tells the story.
inline ExperimentResult run_spectrum_experiment(const ExperimentSpec& spec) {
  spec.require_valid();
  ExperimentResult result;
  switch (spec.kind) {
    case ExperimentKind::Teacher:
      result.data = gen_teacher(spec.n, spec.d, spec.J, spec.seed).data;
      break;
    case ExperimentKind::RandomLabel:
      result.data = gen_random_labels(spec.n, spec.d, spec.seed);
      break;
    case ExperimentKind::Csv:
      result.data = load_csv(spec.csv_path, spec.target_column, spec.normalize);
      break;
  }
  const int n = result.data.n();
  const int keep = std::max(1, static_cast<int>(std::ceil(spec.keep_fraction * n)));

  FlowConfig cfg = spec.flow;
  if (cfg.eta <= 0.0) cfg.eta = default_eta(result.data);
  result.resolved_eta = cfg.eta;
  result.resolved_schedule =
      spec.snapshot_steps.empty() ? default_snapshot_steps(cfg.max_steps) : spec.snapshot_steps;

  InitSpec init = spec.init;
  const NetworkState net0 = init_network(init, spec.m, result.data.d());

  result.series.experiment_id = spec.experiment_id;
  auto& series = result.series;
  const auto& schedule = result.resolved_schedule;

  // The flow loop is unrolled here (rather than reusing run_flow_hooked)
  // because snapshots must fire at scheduled steps even between log records,
  // and the termination step must always carry a final snapshot.
  FlowConfig run_cfg = cfg;
  FlowResult flow;
  {
    run_cfg.require_valid();
    result.data.require_valid();
    flow.net = net0;
    std::int64_t step = 0;
    auto log_state = [&](double gnorm, const std::string& spectrum_id) {
      TrajectoryRecord rec;
      rec.t = static_cast<double>(step) * run_cfg.eta;
      rec.loss = objective(flow.net, result.data, run_cfg.lambda, run_cfg.loss);
      rec.grad_norm = gnorm;
      rec.max_balance_gap = balance_gap(flow.net).cwiseAbs().maxCoeff();
      rec.spectrum_id = spectrum_id;
      flow.log.append(std::move(rec));
    };
    std::size_t sched_cursor = 0;
    while (true) {
      const Velocity v = grad(flow.net, result.data, run_cfg.lambda, run_cfg.loss);
      const double gnorm = v.norm();
      flow.achieved_grad_norm = gnorm;
      const bool stationary = gnorm < run_cfg.eps_grad;
      const bool exhausted = step >= run_cfg.max_steps;
      while (sched_cursor < schedule.size() && schedule[sched_cursor] < step) ++sched_cursor;
      const bool scheduled = sched_cursor < schedule.size() && schedule[sched_cursor] == step;
      std::string spectrum_id;
      if (scheduled || stationary || exhausted) {
        // Force a snapshot at termination so the series always ends at the
        // final state.
        SpectrumSnapshot snap;
        if (series.snapshots.empty() || series.snapshots.back().step != step) {
          snap.step = step;
          snap.t = static_cast<double>(step) * run_cfg.eta;
          snap.id = spec.experiment_id + ":s" + std::to_string(series.snapshots.size());
          const GramMatrix g = gram(GramTag::K, flow.net, result.data.X, snap.id);
          snap.eigenvalues = eig_sym(g, false, snap.t).eigenvalues.head(keep);
          series.snapshots.push_back(std::move(snap));
        }
        spectrum_id = series.snapshots.back().id;
      }
      if (scheduled || stationary || exhausted || step % run_cfg.log_every == 0)
        log_state(gnorm, spectrum_id);
      if (stationary) {
        flow.termination = Termination::Stationary;
        break;
      }
      if (exhausted) {
        flow.termination = Termination::MaxSteps;
        break;
      }
      NetworkState next = flow.net;
      next.w += run_cfg.eta * v.w;
      next.U += run_cfg.eta * v.U;
      if (!next.finite()) {
        flow.termination = Termination::Diverged;
        break;
      }
      flow.net = std::move(next);
      ++step;
    }
    flow.steps = step;
  }
  result.flow = std::move(flow);

  if (series.snapshots.size() >= 2) {
    const auto& prev = series.snapshots[series.snapshots.size() - 2].eigenvalues;
    const auto& last = series.snapshots.back().eigenvalues;
    series.stabilization = snapshot_relative_change(prev, last);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Artifact writers.
// ---------------------------------------------------------------------------

// spectra.csv: experiment_id, t, index, eigenvalue
inline std::string spectra_csv(const SpectrumSeries& series) {
  std::string out = "experiment_id,t,index,eigenvalue\n";
  for (const auto& snap : series.snapshots)
    for (int i = 0; i < snap.eigenvalues.size(); ++i)
      out += series.experiment_id + "," + format_double(snap.t) + "," + std::to_string(i) + "," +
             format_double(snap.eigenvalues[i]) + "\n";
  return out;
}

inline nlohmann::json spec_echo_json(const ExperimentSpec& spec, const ExperimentResult& result) {
  nlohmann::json j;
  j["kind"] = to_string(spec.kind);
  j["experiment_id"] = spec.experiment_id;
  j["n"] = spec.n;
  j["d"] = spec.d;
  j["m"] = spec.m;
  j["J"] = spec.J;
  j["seed"] = spec.seed;
  j["init"] = {{"scheme", to_string(spec.init.scheme)},
               {"seed", spec.init.seed},
               {"radius", spec.init.radius}};
  j["flow"] = {{"eta", result.resolved_eta},
               {"max_steps", spec.flow.max_steps},
               {"lambda", spec.flow.lambda},
               {"eps_grad", spec.flow.eps_grad},
               {"log_every", spec.flow.log_every}};
  j["snapshot_steps"] = result.resolved_schedule;
  j["keep_fraction"] = spec.keep_fraction;
  if (spec.kind == ExperimentKind::Csv) {
    j["csv_path"] = spec.csv_path;
    j["target_column"] = spec.target_column;
    j["normalize"] = spec.normalize;
  }
  j["termination"] = to_string(result.flow.termination);
  j["steps"] = result.flow.steps;
  j["achieved_grad_norm"] = result.flow.achieved_grad_norm;
  j["stabilization"] = result.series.stabilization;
  return j;
}

inline void write_experiment_outputs(const std::filesystem::path& outdir,
                                     const ExperimentSpec& spec, const ExperimentResult& result) {
  atomic_write_text(outdir / "spectra.csv", spectra_csv(result.series));
  atomic_write_text(outdir / "trajectory.csv", trajectory_csv(result.flow.log));
  atomic_write_text(outdir / "spec.json", spec_echo_json(spec, result).dump(2) + "\n");
}

}  // namespace adaptive_kernel
