#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace benchtop {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

class BenchtopError : public std::runtime_error {
 public:
  explicit BenchtopError(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw BenchtopError(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

// splitmix64, used to derive independent seeds from a root seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(root ^ (a * 0x9e3779b97f4a7c15ULL)) ^ b);
}

constexpr double kPi = 3.14159265358979323846;

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

inline double uniform01(Rng& rng) {
  // 53-bit mantissa draw; deterministic across platforms, unlike
  // std::uniform_real_distribution.
  return double(rng() >> 11) * (1.0 / 9007199254740992.0);
}

inline double normal01(Rng& rng) {
  // Box-Muller on explicit uniforms for cross-platform determinism.
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline Mat random_normal(int rows, int cols, Rng& rng, double scale = 1.0) {
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = scale * normal01(rng);
  return m;
}

// Truncated normal in [-2, 2] sigmas, the usual transformer init.
inline Mat truncated_normal(int rows, int cols, Rng& rng, double scale) {
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double x;
      do {
        x = normal01(rng);
      } while (std::abs(x) > 2.0);
      m(r, c) = scale * x;
    }
  return m;
}

inline double clamp(double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); }

// f(x) = GELU(x) + 0.01*min(x, 0)
inline double leaky_gelu(double x) {
  double g = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
  return g + 0.01 * std::min(x, 0.0);
}

inline double leaky_gelu_grad(double x) {
  double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  double g = cdf + x * phi;
  return g + (x < 0.0 ? 0.01 : 0.0);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace benchtop
