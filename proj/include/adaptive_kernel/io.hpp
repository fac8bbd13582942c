// File output: CSV serializers and atomic writes.  Every artifact is written
// to a temporary file and renamed into place so readers never observe a
// partial file.
#pragma once

#include "adaptive_kernel/common.hpp"
#include "adaptive_kernel/dynamics.hpp"
#include "adaptive_kernel/kernels.hpp"
#include "adaptive_kernel/spectral.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

namespace adaptive_kernel {

// Shortest round-trippable decimal rendering of a double.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void atomic_write_text(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw config_error("cannot open for writing: " + tmp.string());
    out << content;
    if (!out.flush()) throw config_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

// trajectory.csv: t, loss, grad_norm, max_balance_gap, spectrum_id
inline std::string trajectory_csv(const TrajectoryLog& log) {
  std::string out = "t,loss,grad_norm,max_balance_gap,spectrum_id\n";
  for (const auto& r : log.records) {
    out += format_double(r.t) + "," + format_double(r.loss) + "," + format_double(r.grad_norm) +
           "," + format_double(r.max_balance_gap) + "," + r.spectrum_id + "\n";
  }
  return out;
}

// Dense Gram CSV plus a JSON sidecar carrying its metadata.
inline void write_gram(const std::filesystem::path& csv_path, const GramMatrix& g) {
  std::string out;
  for (int i = 0; i < g.n(); ++i) {
    for (int j = 0; j < g.n(); ++j) {
      out += format_double(g.G(i, j));
      out += j + 1 < g.n() ? ',' : '\n';
    }
  }
  atomic_write_text(csv_path, out);
  nlohmann::json side;
  side["tag"] = to_string(g.tag);
  side["provenance"] = g.provenance;
  side["n"] = g.n();
  side["symmetry_defect"] = g.symmetry_defect;
  atomic_write_text(csv_path.string() + ".json", side.dump(2) + "\n");
}

// Spectrum rows compatible with the experiment series format.
inline std::string spectrum_csv_rows(const Spectrum& s) {
  std::string out;
  for (int i = 0; i < s.n(); ++i)
    out += format_double(s.t) + "," + std::to_string(i) + "," +
           format_double(s.eigenvalues[i]) + "\n";
  return out;
}

}  // namespace adaptive_kernel
