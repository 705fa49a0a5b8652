#pragma once

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "volact/linalg.hpp"

namespace volact {

// Layout shared by both encodings: per frequency level l, the three sines
// sin(2^l x) followed by the three cosines cos(2^l x).

inline std::size_t pe_size(std::size_t degree) { return 3 + 6 * degree; }
inline std::size_t ipe_size(std::size_t degree) { return 6 * degree; }

/// (x, sin(2^0 x), cos(2^0 x), ..., sin(2^(L-1) x), cos(2^(L-1) x)).
inline void positional_encoding(const Vec3& x, std::size_t degree, std::span<double> out) {
  out[0] = x.x();
  out[1] = x.y();
  out[2] = x.z();
  double freq = 1.0;
  for (std::size_t l = 0; l < degree; ++l, freq *= 2.0) {
    const std::size_t base = 3 + 6 * l;
    for (int a = 0; a < 3; ++a) {
      out[base + static_cast<std::size_t>(a)] = std::sin(freq * x(a));
      out[base + 3 + static_cast<std::size_t>(a)] = std::cos(freq * x(a));
    }
  }
}

inline std::vector<double> positional_encoding(const Vec3& x, std::size_t degree) {
  std::vector<double> out(pe_size(degree));
  positional_encoding(x, degree, out);
  return out;
}

/// Writes the encoding to column 0 of `m` and its Jacobian d(enc)/dx to
/// columns 1..3, starting at `row`.
inline void positional_encoding_jvp(const Vec3& x, std::size_t degree, Eigen::MatrixXd& m, Eigen::Index row = 0) {
  m.block(row, 0, static_cast<Eigen::Index>(pe_size(degree)), 4).setZero();
  for (int a = 0; a < 3; ++a) {
    m(row + a, 0) = x(a);
    m(row + a, 1 + a) = 1.0;
  }
  double freq = 1.0;
  for (std::size_t l = 0; l < degree; ++l, freq *= 2.0) {
    const Eigen::Index base = row + 3 + 6 * static_cast<Eigen::Index>(l);
    for (int a = 0; a < 3; ++a) {
      const double s = std::sin(freq * x(a));
      const double c = std::cos(freq * x(a));
      m(base + a, 0) = s;
      m(base + a, 1 + a) = freq * c;
      m(base + 3 + a, 0) = c;
      m(base + 3 + a, 1 + a) = -freq * s;
    }
  }
}

/// Accumulates d(enc)/dx^T * d_enc into the returned gradient.
inline Vec3 positional_encoding_backward(const Vec3& x, std::size_t degree, std::span<const double> d_enc) {
  Vec3 g(d_enc[0], d_enc[1], d_enc[2]);
  double freq = 1.0;
  for (std::size_t l = 0; l < degree; ++l, freq *= 2.0) {
    const std::size_t base = 3 + 6 * l;
    for (int a = 0; a < 3; ++a) {
      const auto ia = static_cast<std::size_t>(a);
      g(a) += freq * (std::cos(freq * x(a)) * d_enc[base + ia] - std::sin(freq * x(a)) * d_enc[base + 3 + ia]);
    }
  }
  return g;
}

/// Expected sines/cosines of a Gaussian with mean mu and diagonal variance
/// var: sin(2^l mu) * exp(-0.5 * 4^l * var), and the cosine analogue.
inline void integrated_pe(const Vec3& mu, const Vec3& var, std::size_t degree, std::span<double> out) {
  double freq = 1.0;
  for (std::size_t l = 0; l < degree; ++l, freq *= 2.0) {
    const std::size_t base = 6 * l;
    for (int a = 0; a < 3; ++a) {
      const double damp = std::exp(-0.5 * freq * freq * var(a));
      out[base + static_cast<std::size_t>(a)] = std::sin(freq * mu(a)) * damp;
      out[base + 3 + static_cast<std::size_t>(a)] = std::cos(freq * mu(a)) * damp;
    }
  }
}

inline std::vector<double> integrated_pe(const Vec3& mu, const Vec3& var, std::size_t degree) {
  std::vector<double> out(ipe_size(degree));
  integrated_pe(mu, var, degree, out);
  return out;
}

/// Gradient of <d_enc, integrated_pe(mu, var)> with respect to mu.
inline Vec3 integrated_pe_backward(const Vec3& mu, const Vec3& var, std::size_t degree, std::span<const double> d_enc) {
  Vec3 g = Vec3::Zero();
  double freq = 1.0;
  for (std::size_t l = 0; l < degree; ++l, freq *= 2.0) {
    const std::size_t base = 6 * l;
    for (int a = 0; a < 3; ++a) {
      const auto ia = static_cast<std::size_t>(a);
      const double damp = std::exp(-0.5 * freq * freq * var(a));
      g(a) += freq * damp * (std::cos(freq * mu(a)) * d_enc[base + ia] - std::sin(freq * mu(a)) * d_enc[base + 3 + ia]);
    }
  }
  return g;
}

}  // namespace volact
