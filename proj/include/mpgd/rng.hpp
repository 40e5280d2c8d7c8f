#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace mpgd {

/// Seedable random stream with an explicit, platform-independent normal
/// transform so that runs are bit-reproducible for a given seed.
///
/// Engine: mt19937_64, seeded through splitmix64 so that nearby seeds
/// (master seed, chain index) give decorrelated streams. Gaussians come
/// from a hand-rolled Box-Muller on 53-bit uniforms; std::normal_distribution
/// is implementation-defined and would break the reproducibility contract.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "mt19937_64/splitmix64-seeded/box-muller";

  explicit Rng(std::uint64_t seed) : engine_(mix(seed)) {}

  /// Independent stream for one chain, derived from (master seed, chain index).
  /// Streams do not depend on scheduling order.
  static Rng for_chain(std::uint64_t master_seed, std::uint64_t chain_index) {
    std::uint64_t s = master_seed;
    s = splitmix64(s);
    s ^= splitmix64(chain_index + 0x9e3779b97f4a7c15ULL);
    return Rng(s);
  }

  /// Uniform in (0, 1].
  double uniform() {
    const std::uint64_t bits = engine_() >> 11;  // 53 bits
    return static_cast<double>(bits + 1) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller (pairs cached).
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal();
    return m;
  }

  /// Index in [0, n) from the cumulative weights walk.
  int categorical(const Eigen::VectorXd& weights) {
    const double u = uniform() * weights.sum();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u <= acc) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size() - 1);
  }

  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  static std::uint64_t mix(std::uint64_t seed) { return splitmix64(seed); }

  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace mpgd
