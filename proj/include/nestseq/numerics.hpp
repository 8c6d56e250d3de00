// Dense types, activations, and seeded randomness shared by every module.
//
// All numeric work is double precision. Matrices are row-major so the
// serialized parameter layout matches the in-memory one.

#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace nestseq {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

/// Checked matrix-vector product. Eigen would assert on a shape mismatch;
/// we want a recoverable error that names the shapes instead.
inline Vector matvec(const Matrix& m, const Vector& v) {
  if (m.cols() != v.size()) {
    std::ostringstream os;
    os << "matvec: dimension mismatch, matrix is " << m.rows() << "x" << m.cols()
       << " but vector has length " << v.size();
    throw std::invalid_argument(os.str());
  }
  return m * v;
}

inline Vector tanh_vec(const Vector& v) { return v.array().tanh(); }

/// Diagonal of the tanh Jacobian, expressed in terms of the already
/// activated value h = tanh(z): d tanh/dz = 1 - h^2.
inline Vector tanh_jacobian_diag(const Vector& h) {
  for (Eigen::Index i = 0; i < h.size(); ++i) {
    if (!(h[i] >= -1.0 && h[i] <= 1.0)) {
      std::ostringstream os;
      os << "tanh_jacobian_diag: entry " << i << " = " << h[i]
         << " is outside [-1, 1]; expected an activated hidden state";
      throw std::invalid_argument(os.str());
    }
  }
  return 1.0 - h.array().square();
}

/// Logistic function, stable for the whole double range: never overflows
/// and underflows only into subnormals (sigmoid(-710) is still > 0).
inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }
inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Deterministic pseudo-random generator. The engine is SplitMix64
/// (Steele, Lea & Flood 2014; Vigna's public-domain reference code),
/// chosen because it is tiny, well documented, and has published test
/// vectors, so seeds reproduce across platforms and languages.
///
/// Derived draws are built only from the 64-bit stream:
///   - uniform doubles take the top 53 bits,
///   - normals use Box-Muller,
///   - gamma uses Marsaglia-Tsang, poisson the exponential-sum method.
/// Single-owner mutable state; never share one instance across threads.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : state_(seed), seed_(seed) {}

  std::uint64_t seed_used() const { return seed_; }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in (0, 1]; used where log(u) must stay finite.
  double uniform01_open_left() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n). n = 0 is rejected. The modulo bias is
  /// below 2^-32 for every n used in this project.
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("SeededRng::next_below: n must be positive");
    return next_u64() % n;
  }

  double normal(double mean, double sd);
  double gamma(double shape);      // unit scale, shape > 0
  std::uint64_t poisson(double lambda);

  /// n independent Normal(mean, sd) draws; requires sd >= 0.
  Vector normals(Eigen::Index n, double mean, double sd);

  /// In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[next_below(i)]);
    }
  }

 private:
  std::uint64_t state_;
  std::uint64_t seed_;
};

}  // namespace nestseq
