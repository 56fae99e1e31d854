#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>

#include "nlselab/lattice.hpp"

namespace nlselab {

/// Identifier recorded in manifests. std::mt19937_64 is fully specified by
/// the standard; the normal deviates come from our own Box-Muller transform
/// because std::normal_distribution is implementation-defined.
inline constexpr const char* kRngAlgorithm = "mt19937_64+box-muller";

class PortableRng {
 public:
  explicit PortableRng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double rad = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * std::numbers::pi * u2;
    spare_ = rad * std::sin(ang);
    has_spare_ = true;
    return rad * std::cos(ang);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

enum class InitKind { Bump, Mode, Noise };

inline std::string to_string(InitKind k) {
  switch (k) {
    case InitKind::Bump: return "bump";
    case InitKind::Mode: return "mode";
    case InitKind::Noise: return "noise";
  }
  return "bump";
}

struct InitSpec {
  InitKind kind = InitKind::Bump;
  double norm = 1.0;        ///< target norm_dx
  std::uint64_t seed = 0;   ///< noise only
  int mode = 1;             ///< sine mode index, 1..2K+1
  double sigma = 0.0;       ///< bump width; 0 means K*delta_x/4
};

/// Bump a*exp(-(l dx)^2/sigma^2), a single sine mode, or complex Gaussian
/// noise, rescaled to the requested discrete H1 norm.
inline FieldState make_initial_state(const Lattice& lat, const InitSpec& spec) {
  const GridSpec& g = lat.grid();
  const int n = g.dim();
  FieldState u(n);
  switch (spec.kind) {
    case InitKind::Bump: {
      const double sigma = spec.sigma > 0.0 ? spec.sigma : g.K * g.delta_x / 4.0;
      for (int l = -g.K; l <= g.K; ++l) {
        const double x = l * g.delta_x;
        u(l + g.K) = std::exp(-x * x / (sigma * sigma));
      }
      break;
    }
    case InitKind::Mode: {
      if (spec.mode < 1 || spec.mode > n) throw ContractViolation("initial state: mode index out of range");
      u = lat.sine_matrix().col(spec.mode - 1).cast<Complex>();
      break;
    }
    case InitKind::Noise: {
      PortableRng rng(spec.seed);
      for (int i = 0; i < n; ++i) {
        const double re = rng.normal();
        const double im = rng.normal();
        u(i) = Complex(re, im) * std::sqrt(0.5);
      }
      break;
    }
  }
  const double nu = norm_dx(g, u);
  if (spec.norm < 0.0) throw ContractViolation("initial state: norm must be >= 0");
  return nu > 0.0 ? FieldState(u * (spec.norm / nu)) : u;
}

}  // namespace nlselab
