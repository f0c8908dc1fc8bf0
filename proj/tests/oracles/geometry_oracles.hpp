#pragma once

// Independent reference computations used only by tests. None of these call
// into the library's own propagation or frame code.

#include <array>
#include <cmath>
#include <functional>

namespace oracle
{

using V3 = std::array<double, 3>;

inline constexpr double kPi = 3.14159265358979323846;

/// Plain bisection on f(E) = E - e sin E - M over [M - e, M + e].
inline double kepler_bisection(double m, double e, double tol = 1e-15)
{
  double lo = m - e;
  double hi = m + e;
  for (int i = 0; i < 400 && hi - lo > tol; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid - e * std::sin(mid) - m < 0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

using M3 = std::array<std::array<double, 3>, 3>;

inline M3 rot_x(double a)
{
  return {{{1, 0, 0}, {0, std::cos(a), -std::sin(a)}, {0, std::sin(a), std::cos(a)}}};
}
inline M3 rot_z(double a)
{
  return {{{std::cos(a), -std::sin(a), 0}, {std::sin(a), std::cos(a), 0}, {0, 0, 1}}};
}
inline V3 mat_vec(const M3& m, const V3& v)
{
  return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2], m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
          m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
}

struct Elements
{
  double sqrt_a, e, i, raan0, raan_rate, argp, m0, toa;
};

/// Textbook route: perifocal position from the eccentric anomaly
/// (a(cos E - e), b sin E), rotated by Rz(Omega) Rx(i) Rz(omega), with Omega
/// referenced to Greenwich at the propagation time.
inline V3 propagate_textbook(const Elements& el, double tk)
{
  constexpr double mu = 3.986005e14;
  constexpr double we = 7.2921151467e-5;
  const double a = el.sqrt_a * el.sqrt_a;
  const double n = std::sqrt(mu / (a * a * a));
  const double ea = kepler_bisection(el.m0 + n * tk, el.e);
  const V3 perifocal{a * (std::cos(ea) - el.e), a * std::sqrt(1 - el.e * el.e) * std::sin(ea), 0.0};
  const double omega_g = el.raan0 + (el.raan_rate - we) * tk - we * el.toa;
  return mat_vec(rot_z(omega_g), mat_vec(rot_x(el.i), mat_vec(rot_z(el.argp), perifocal)));
}

/// WGS-84 forward transform written with the a^2/b^2 form of the prime
/// vertical radius.
inline V3 geodetic_to_ecef_ab(double lat_deg, double lon_deg, double h)
{
  constexpr double a = 6378137.0;
  constexpr double f = 1.0 / 298.257223563;
  constexpr double b = a * (1 - f);
  const double lat = lat_deg * kPi / 180.0;
  const double lon = lon_deg * kPi / 180.0;
  const double c = std::cos(lat);
  const double s = std::sin(lat);
  const double n = a * a / std::sqrt(a * a * c * c + b * b * s * s);
  return {(n + h) * c * std::cos(lon), (n + h) * c * std::sin(lon), (b * b / (a * a) * n + h) * s};
}

inline V3 sub(const V3& a, const V3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline double dot3(const V3& a, const V3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline V3 cross3(const V3& a, const V3& b)
{
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline V3 unit(const V3& a)
{
  const double n = std::sqrt(dot3(a, a));
  return {a[0] / n, a[1] / n, a[2] / n};
}

struct Look
{
  double el_deg;
  double az_deg;
};

/// Look angles with the local basis built numerically: north and east from
/// central differences of the forward transform in latitude and longitude,
/// up as their cross product.
inline Look look_angles_fd(const V3& sat, double lat_deg, double lon_deg, double h,
                           const std::function<V3(double, double, double)>& forward)
{
  const double step = 1e-3; // degrees
  const V3 north = unit(sub(forward(lat_deg + step, lon_deg, h), forward(lat_deg - step, lon_deg, h)));
  const V3 east = unit(sub(forward(lat_deg, lon_deg + step, h), forward(lat_deg, lon_deg - step, h)));
  const V3 up = unit(cross3(east, north));
  const V3 los = sub(sat, forward(lat_deg, lon_deg, h));
  const double e = dot3(los, east);
  const double n = dot3(los, north);
  const double u = dot3(los, up);
  const double el = std::atan2(u, std::hypot(e, n)) * 180.0 / kPi;
  double az = std::atan2(e, n) * 180.0 / kPi;
  if (az < 0) az += 360.0;
  return {el, az};
}

/// Welford running mean.
class StreamingMean
{
public:
  void add(double x)
  {
    ++n_;
    mean_ += (x - mean_) / static_cast<double>(n_);
  }
  double mean() const { return mean_; }
  std::size_t count() const { return n_; }

private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
};

} // namespace oracle
