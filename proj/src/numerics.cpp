#include "nestseq/numerics.hpp"

#include <cmath>

namespace nestseq {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

double SeededRng::normal(double mean, double sd) {
  if (!(sd >= 0.0)) throw std::invalid_argument("SeededRng::normal: sd must be >= 0");
  // Box-Muller, cosine branch only. Two uniforms are always consumed so
  // the stream position does not depend on mean/sd.
  const double u1 = uniform01_open_left();
  const double u2 = uniform01();
  const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  return mean + sd * z;
}

Vector SeededRng::normals(Eigen::Index n, double mean, double sd) {
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = normal(mean, sd);
  return out;
}

double SeededRng::gamma(double shape) {
  if (!(shape > 0.0)) throw std::invalid_argument("SeededRng::gamma: shape must be > 0");
  if (shape < 1.0) {
    // Boost to shape + 1, then scale back (Ahrens-Dieter).
    const double u = uniform01_open_left();
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  // Marsaglia-Tsang squeeze method.
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x;
    double v;
    do {
      x = normal(0.0, 1.0);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform01_open_left();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::uint64_t SeededRng::poisson(double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("SeededRng::poisson: lambda must be >= 0");
  if (lambda == 0.0) return 0;
  // Sum of exponential inter-arrival times; exact and safe for any lambda
  // reachable here (counts are a few hundred at most).
  std::uint64_t k = 0;
  double s = 0.0;
  for (;;) {
    s += -std::log(uniform01_open_left());
    if (s > lambda) return k;
    ++k;
  }
}

}  // namespace nestseq
