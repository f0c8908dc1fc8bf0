#pragma once

#include <cmath>

namespace mpdetect
{

struct Vec3
{
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Vec3& operator+=(const Vec3& o) noexcept
  {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  constexpr Vec3& operator-=(const Vec3& o) noexcept
  {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }

  friend constexpr Vec3 operator+(Vec3 a, const Vec3& b) noexcept { return a += b; }
  friend constexpr Vec3 operator-(Vec3 a, const Vec3& b) noexcept { return a -= b; }
  friend constexpr Vec3 operator-(const Vec3& a) noexcept { return {-a.x, -a.y, -a.z}; }
  friend constexpr Vec3 operator*(double s, const Vec3& a) noexcept
  {
    return {s * a.x, s * a.y, s * a.z};
  }
  friend constexpr Vec3 operator*(const Vec3& a, double s) noexcept { return s * a; }
  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

constexpr double dot(const Vec3& a, const Vec3& b) noexcept
{
  return a.x * b.x + a.y * b.y + a.z * b.z;
}

constexpr Vec3 cross(const Vec3& a, const Vec3& b) noexcept
{
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline double norm(const Vec3& a) noexcept { return std::sqrt(dot(a, a)); }

inline Vec3 normalized(const Vec3& a) noexcept { return (1.0 / norm(a)) * a; }

/// Mirror `v` in the plane with unit normal `n`.
constexpr Vec3 reflect(const Vec3& v, const Vec3& n) noexcept
{
  return v - (2.0 * dot(v, n)) * n;
}

} // namespace mpdetect
