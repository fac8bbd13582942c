// Shared infrastructure: error taxonomy, deterministic random streams, and
// the process-wide parallelism cap.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <cstdlib>
#include <cmath>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace adaptive_kernel {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Error taxonomy.  Every failure mode the library can raise maps onto one of
// these, so callers (and the CLI's exit-code contract) can dispatch on type.
// ---------------------------------------------------------------------------

// Inputs whose dimensions do not conform.
struct shape_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration values (bad scheme parameters, bad file contents).
struct config_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A documented precondition of an operation does not hold.
struct precondition_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A caller-facing contract was violated by the data (e.g. an unbalanced
// network passed where balance is required).
struct contract_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Internal numerical failure (non-convergence, impossible asymmetry).
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Deterministic random streams.
//
// The generators below spell out their transformation from raw 64-bit draws
// instead of delegating to std::normal_distribution /
// std::uniform_real_distribution, whose algorithms are implementation-defined
// and therefore not reproducible across standard libraries.  Every sampled
// artifact in this project must be bit-identical given the same seed.
// ---------------------------------------------------------------------------
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform on [0,1) with 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; draws are generated in pairs.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // Reject u1 == 0 so the logarithm stays finite.
    double u1 = uniform();
    while (u1 == 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // +1 or -1 with equal probability.
  double rademacher() { return (engine_() & 1u) ? 1.0 : -1.0; }

  // Uniform on the sphere of the given radius in d dimensions.
  Vector sphere(int d, double radius) {
    Vector v(d);
    double norm2 = 0.0;
    do {
      for (int k = 0; k < d; ++k) v[k] = gaussian();
      norm2 = v.squaredNorm();
    } while (norm2 == 0.0);
    return v * (radius / std::sqrt(norm2));
  }

  Vector gaussian_vector(int d, double scale = 1.0) {
    Vector v(d);
    for (int k = 0; k < d; ++k) v[k] = scale * gaussian();
    return v;
  }

  std::uint64_t raw() { return engine_(); }

 private:
  // SplitMix64: tiny, well-mixed, and fully specified, so streams never
  // depend on the standard library's engine implementation.
  struct SplitMix64 {
    std::uint64_t state;
    explicit SplitMix64(std::uint64_t seed) : state(seed) {}
    std::uint64_t operator()() {
      std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      return z ^ (z >> 31);
    }
  };
  SplitMix64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Parallelism cap.  ADAPTIVE_KERNEL_THREADS limits internal parallelism;
// 0 (or unset) selects the sequential deterministic mode.
// ---------------------------------------------------------------------------
inline int thread_cap() {
  const char* env = std::getenv("ADAPTIVE_KERNEL_THREADS");
  if (env == nullptr) return 0;
  const long v = std::strtol(env, nullptr, 10);
  if (v <= 0) return 0;
  return static_cast<int>(v);
}

// Runs fn(i) for i in [0, count).  Work items must be independent: each
// writes to its own slot, so the result is identical for any thread count.
template <typename Fn>
void parallel_for(std::int64_t count, Fn&& fn) {
  const int threads = thread_cap();
  if (threads <= 1 || count < 2) {
    for (std::int64_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const int workers = static_cast<int>(
      std::min<std::int64_t>(threads, count));
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::int64_t i = w; i < count; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace adaptive_kernel
