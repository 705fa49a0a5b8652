#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <utility>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "volact/errors.hpp"

namespace volact {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Rigid transform x -> R x + t.
struct Transform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Transform identity() { return {}; }

  static Transform translate(const Vec3& t) {
    Transform out;
    out.translation = t;
    return out;
  }

  /// Rotation by `angle` radians about `axis` through `pivot`.
  static Transform rotate_about(const Vec3& axis, double angle, const Vec3& pivot = Vec3::Zero()) {
    const Vec3 k = axis.normalized();
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    Mat3 skew;
    skew << 0.0, -k.z(), k.y(), k.z(), 0.0, -k.x(), -k.y(), k.x(), 0.0;
    Transform out;
    out.rotation = c * Mat3::Identity() + s * skew + (1.0 - c) * (k * k.transpose());
    out.translation = pivot - out.rotation * pivot;
    return out;
  }

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }

  /// Composition: (*this * other)(x) == this->apply(other.apply(x)).
  Transform operator*(const Transform& other) const {
    Transform out;
    out.rotation = rotation * other.rotation;
    out.translation = rotation * other.translation + translation;
    return out;
  }

  Transform inverse() const {
    Transform out;
    out.rotation = rotation.transpose();
    out.translation = -(out.rotation * translation);
    return out;
  }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  static Transform from_matrix(const Mat4& m) {
    Transform out;
    out.rotation = m.topLeftCorner<3, 3>();
    out.translation = m.topRightCorner<3, 1>();
    return out;
  }

  /// Row-major 16 floats, the serialized form.
  std::array<double, 16> to_row_major() const {
    std::array<double, 16> out{};
    const Mat4 m = matrix();
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) out[static_cast<std::size_t>(r * 4 + c)] = m(r, c);
    return out;
  }

  static Transform from_row_major(const std::array<double, 16>& v) {
    Mat4 m;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) m(r, c) = v[static_cast<std::size_t>(r * 4 + c)];
    return from_matrix(m);
  }

  bool is_rigid(double tol = 1e-9) const {
    const Mat3 gram = rotation.transpose() * rotation;
    return (gram - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol && rotation.determinant() > 0.0;
  }
};

/// Solves A x = b by Gaussian elimination with partial pivoting.
/// Returns nullopt when |det A| <= 1e-12 * ||A||_F^3.
inline std::optional<Vec3> try_solve3(const Mat3& a, const Vec3& b) {
  const double scale = a.norm();
  std::array<std::array<double, 4>, 3> m{};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m[r][c] = a(r, c);
    m[r][3] = b(r);
  }
  double det = 1.0;
  for (int col = 0; col < 3; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 3; ++r)
      if (std::abs(m[r][col]) > std::abs(m[pivot][col])) pivot = r;
    if (pivot != col) {
      std::swap(m[pivot], m[col]);
      det = -det;
    }
    det *= m[col][col];
    if (m[col][col] == 0.0) return std::nullopt;
    for (int r = col + 1; r < 3; ++r) {
      const double f = m[r][col] / m[col][col];
      for (int c = col; c < 4; ++c) m[r][c] -= f * m[col][c];
    }
  }
  if (!(std::abs(det) > 1e-12 * scale * scale * scale)) return std::nullopt;
  Vec3 x;
  for (int r = 2; r >= 0; --r) {
    double acc = m[r][3];
    for (int c = r + 1; c < 3; ++c) acc -= m[r][c] * x(c);
    x(r) = acc / m[r][r];
  }
  return x;
}

inline Vec3 solve3(const Mat3& a, const Vec3& b) {
  if (auto x = try_solve3(a, b)) return *x;
  throw SingularMatrix("solve3: matrix is singular");
}

/// Euclidean distance from p to the segment [a, b].
inline double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  double u = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
  u = std::clamp(u, 0.0, 1.0);
  return (p - (a + u * ab)).norm();
}

}  // namespace volact
