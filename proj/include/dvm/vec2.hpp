#pragma once

#include <cmath>

namespace dvm {

using Real = double;

struct Vec2 {
  Real x = 0.0;
  Real y = 0.0;

  constexpr Vec2 &operator+=(const Vec2 &o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  constexpr Vec2 &operator-=(const Vec2 &o) {
    x -= o.x;
    y -= o.y;
    return *this;
  }
  friend constexpr Vec2 operator+(Vec2 a, const Vec2 &b) { return a += b; }
  friend constexpr Vec2 operator-(Vec2 a, const Vec2 &b) { return a -= b; }
  friend constexpr Vec2 operator-(const Vec2 &a) { return {-a.x, -a.y}; }
  friend constexpr Vec2 operator*(Real s, const Vec2 &a) { return {s * a.x, s * a.y}; }
  friend constexpr Vec2 operator*(const Vec2 &a, Real s) { return {s * a.x, s * a.y}; }
  friend constexpr bool operator==(const Vec2 &, const Vec2 &) = default;
};

constexpr Real dot(const Vec2 &a, const Vec2 &b) { return a.x * b.x + a.y * b.y; }
constexpr Real cross(const Vec2 &a, const Vec2 &b) { return a.x * b.y - a.y * b.x; }
constexpr Real norm2(const Vec2 &a) { return dot(a, a); }
inline Real norm(const Vec2 &a) { return std::hypot(a.x, a.y); }
/// Counter-clockwise rotation by a right angle.
constexpr Vec2 perp(const Vec2 &a) { return {-a.y, a.x}; }
inline Vec2 normalized(const Vec2 &a) { return (1.0 / norm(a)) * a; }

inline Vec2 rotate(const Vec2 &a, Real angle) {
  const Real c = std::cos(angle), s = std::sin(angle);
  return {c * a.x - s * a.y, s * a.x + c * a.y};
}

/// |sin| of the angle between two nonzero vectors.
inline Real abs_sin(const Vec2 &a, const Vec2 &b) {
  return std::abs(cross(a, b)) / (norm(a) * norm(b));
}

} // namespace dvm
