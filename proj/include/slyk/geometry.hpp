#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include "slyk/errors.hpp"

namespace slyk::geometry {

inline constexpr double kPi = std::numbers::pi;

constexpr double deg2rad(double deg) noexcept { return deg * kPi / 180.0; }
constexpr double rad2deg(double rad) noexcept { return rad * 180.0 / kPi; }

/// Gaze direction as (pitch, yaw) in radians. Positive pitch looks up,
/// positive yaw looks to the subject's right.
struct GazeAngles {
  double pitch = 0.0;
  double yaw = 0.0;

  friend bool operator==(const GazeAngles&, const GazeAngles&) = default;
};

/// Unit 3D gaze direction: x lateral (right), y vertical (up), z forward.
struct GazeVector3 {
  double x = 0.0;
  double y = 0.0;
  double z = 1.0;

  double dot(const GazeVector3& o) const noexcept { return x * o.x + y * o.y + z * o.z; }
  double norm() const noexcept { return std::sqrt(dot(*this)); }

  friend bool operator==(const GazeVector3&, const GazeVector3&) = default;
};

/// A (pitch, yaw) pair treated as a point in the plane, used for rotation and
/// loss arithmetic.
struct GazeVector2 {
  double a = 0.0;
  double b = 0.0;

  static GazeVector2 from(const GazeAngles& g) noexcept { return {g.pitch, g.yaw}; }
  GazeAngles as_angles() const noexcept { return {a, b}; }
  double norm() const noexcept { return std::hypot(a, b); }

  friend GazeVector2 operator-(const GazeVector2& l, const GazeVector2& r) noexcept {
    return {l.a - r.a, l.b - r.b};
  }
  friend bool operator==(const GazeVector2&, const GazeVector2&) = default;
};

inline constexpr double kUnitTolerance = 1e-6;

inline GazeVector3 angles_to_vector(const GazeAngles& g) {
  if (!std::isfinite(g.pitch) || !std::isfinite(g.yaw)) {
    throw DomainError("angles_to_vector: non-finite pitch/yaw");
  }
  const double cp = std::cos(g.pitch);
  return {cp * std::sin(g.yaw), std::sin(g.pitch), cp * std::cos(g.yaw)};
}

inline void expect_unit(const GazeVector3& v, const char* what) {
  const double n = v.norm();
  SLYK_EXPECT(std::isfinite(n) && std::abs(n - 1.0) <= kUnitTolerance,
              what << ": expected a unit vector, got norm " << n);
}

inline GazeAngles vector_to_angles(const GazeVector3& v) {
  expect_unit(v, "vector_to_angles");
  const double y = std::clamp(v.y, -1.0, 1.0);
  return {std::asin(y), std::atan2(v.x, v.z)};
}

/// Rescales a stored direction to unit length when it drifted by more than
/// kUnitTolerance. Zero or non-finite vectors are rejected.
inline GazeVector3 normalized(const GazeVector3& v) {
  const double n = v.norm();
  SLYK_EXPECT(std::isfinite(n) && n > 0.0, "normalized: zero or non-finite vector");
  if (std::abs(n - 1.0) <= kUnitTolerance) return v;
  return {v.x / n, v.y / n, v.z / n};
}

/// Angle between two unit directions in degrees, in [0, 180].
///
/// Evaluated as atan2(|v x w|, v . w), which equals acos(clamp(v . w)) for unit
/// inputs but stays accurate for nearly parallel vectors.
inline double angular_error(const GazeVector3& v, const GazeVector3& w) {
  expect_unit(v, "angular_error");
  expect_unit(w, "angular_error");
  const double cx = v.y * w.z - v.z * w.y;
  const double cy = v.z * w.x - v.x * w.z;
  const double cz = v.x * w.y - v.y * w.x;
  const double s = std::sqrt(cx * cx + cy * cy + cz * cz);
  const double c = std::clamp(v.dot(w), -1.0, 1.0);
  return rad2deg(std::atan2(s, c));
}

inline double angular_error(const GazeAngles& truth, const GazeAngles& pred) {
  return angular_error(angles_to_vector(truth), angles_to_vector(pred));
}

/// R(theta) g with R = [[cos, -sin], [sin, cos]].
inline GazeVector2 rotate2d(const GazeVector2& g, double theta) {
  if (!std::isfinite(theta) || !std::isfinite(g.a) || !std::isfinite(g.b)) {
    throw DomainError("rotate2d: non-finite input");
  }
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  return {c * g.a - s * g.b, s * g.a + c * g.b};
}

}  // namespace slyk::geometry
