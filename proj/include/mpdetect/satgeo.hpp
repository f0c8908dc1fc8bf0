#pragma once

// Almanac-based GPS satellite geometry: YUMA parsing, Keplerian propagation
// (IS-GPS-200 user algorithm), WGS-84 conversions and local look angles.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mpdetect/detail/text.hpp"
#include "mpdetect/error.hpp"
#include "mpdetect/obs.hpp"
#include "mpdetect/vec3.hpp"

namespace mpdetect::satgeo
{

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kDegPerRad = 180.0 / kPi;
inline constexpr double kRadPerDeg = kPi / 180.0;

inline constexpr double kGpsMu = 3.986005e14;               ///< m^3/s^2
inline constexpr double kEarthRotationRate = 7.2921151467e-5; ///< rad/s
inline constexpr double kSecondsPerWeek = 604800.0;

inline constexpr double kWgs84A = 6378137.0;
inline constexpr double kWgs84F = 1.0 / 298.257223563;
inline constexpr double kWgs84B = kWgs84A * (1.0 - kWgs84F);
inline constexpr double kWgs84E2 = kWgs84F * (2.0 - kWgs84F);

/// Unix time of the GPS epoch, 1980-01-06T00:00:00Z.
inline constexpr std::int64_t kGpsEpochUnix = 315964800;
inline constexpr int kDefaultLeapSeconds = 18;

inline constexpr double kKeplerTolerance = 1e-12;
inline constexpr int kKeplerNewtonIterations = 50;
inline constexpr int kKeplerBisectionIterations = 200;

struct AlmanacEntry
{
  int prn = 0;
  int health = 0;
  double eccentricity = 0.0;
  double toa = 0.0;            ///< s of GPS week
  double inclination = 0.0;    ///< rad
  double raan_rate = 0.0;      ///< rad/s
  double sqrt_a = 0.0;         ///< m^(1/2)
  double raan = 0.0;           ///< rad, at weekly epoch
  double arg_perigee = 0.0;    ///< rad
  double mean_anomaly = 0.0;   ///< rad, at toa
  double af0 = 0.0;            ///< s
  double af1 = 0.0;            ///< s/s
  int week = 0;                ///< 10-bit broadcast or full GPS week

  double semi_major_axis() const noexcept { return sqrt_a * sqrt_a; }
};

struct GeodeticPosition
{
  double lat_deg = 0.0;
  double lon_deg = 0.0;
  double height_m = 0.0;
};

struct LookAngles
{
  double elevation_deg = 0.0;
  double azimuth_deg = 0.0;
};

struct SatelliteState
{
  int prn = 0;
  std::int64_t epoch = 0; ///< Unix seconds
  Vec3 ecef;
  double elevation_deg = 0.0;
  double azimuth_deg = 0.0;
};

/// Continuous seconds since the GPS epoch.
struct GpsTime
{
  double seconds = 0.0;
};

inline GpsTime unix_to_gps(std::int64_t unix_seconds, int leap_seconds = kDefaultLeapSeconds)
{
  return {static_cast<double>(unix_seconds - kGpsEpochUnix + leap_seconds)};
}

inline void validate(const AlmanacEntry& e)
{
  const std::string who = "almanac PRN " + std::to_string(e.prn) + ": ";
  if (!(e.eccentricity >= 0.0 && e.eccentricity < 0.1)) {
    throw ValidationError(who + "eccentricity " + detail::format_double(e.eccentricity) +
                          " outside [0, 0.1)");
  }
  const double a = e.semi_major_axis();
  if (!(a > 20e6 && a < 33e6)) {
    throw ValidationError(who + "semi-major axis " + detail::format_double(a) +
                          " m outside (20e6, 33e6)");
  }
  for (double v : {e.toa, e.inclination, e.raan_rate, e.raan, e.arg_perigee, e.mean_anomaly,
                   e.af0, e.af1}) {
    if (!std::isfinite(v)) {
      throw ValidationError(who + "non-finite orbital element");
    }
  }
}

inline void validate(const GeodeticPosition& p)
{
  if (!(std::abs(p.lat_deg) <= 90.0) || !(std::abs(p.lon_deg) <= 180.0) ||
      !std::isfinite(p.height_m)) {
    throw ValidationError("receiver position out of range: lat " +
                          detail::format_double(p.lat_deg) + ", lon " +
                          detail::format_double(p.lon_deg));
  }
}

namespace detail
{

/// Lower-cases and strips whitespace so "SQRT(A)  (m 1/2)" becomes "sqrt(a)(m1/2)".
inline std::string normalize_label(std::string_view label)
{
  std::string out;
  for (char c : label) {
    if (!std::isspace(static_cast<unsigned char>(c))) {
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
  }
  return out;
}

enum class YumaField
{
  id,
  health,
  eccentricity,
  toa,
  inclination,
  raan_rate,
  sqrt_a,
  raan,
  arg_perigee,
  mean_anomaly,
  af0,
  af1,
  week,
  count
};

inline constexpr std::array<std::string_view, static_cast<std::size_t>(YumaField::count)>
  kYumaLabels = {"ID",
                 "Health",
                 "Eccentricity",
                 "Time of Applicability(s)",
                 "Orbital Inclination(rad)",
                 "Rate of Right Ascen(r/s)",
                 "SQRT(A)  (m 1/2)",
                 "Right Ascen at Week(rad)",
                 "Argument of Perigee(rad)",
                 "Mean Anom(rad)",
                 "Af0(s)",
                 "Af1(s/s)",
                 "week"};

inline std::optional<YumaField> match_label(std::string_view raw)
{
  static const std::array<std::string_view, static_cast<std::size_t>(YumaField::count)> prefixes = {
    "id",  "health",  "eccentricity", "timeofapplicability", "orbitalinclination",
    "rateofrightascen", "sqrt(a)", "rightascenatweek", "argumentofperigee", "meananom",
    "af0", "af1", "week"};
  auto label = normalize_label(raw);
  for (std::size_t i = 0; i < prefixes.size(); ++i) {
    if (label.rfind(prefixes[i], 0) == 0) {
      return static_cast<YumaField>(i);
    }
  }
  return std::nullopt;
}

} // namespace detail

/// Parses YUMA almanac text. Each "******** Week ... ********" banner opens a
/// block and every one of the thirteen labelled fields must be present.
inline std::vector<AlmanacEntry> parse_yuma(std::string_view text)
{
  using detail::YumaField;
  constexpr auto kFieldCount = static_cast<std::size_t>(YumaField::count);

  struct Block
  {
    std::size_t ordinal = 0;
    std::size_t line = 0;
    std::array<std::optional<double>, kFieldCount> values{};
  };
  std::vector<Block> blocks;

  auto lines = mpdetect::detail::split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    auto line = mpdetect::detail::trim(lines[i]);
    if (line.empty()) {
      continue;
    }
    if (line.front() == '*') {
      blocks.push_back({blocks.size() + 1, line_no, {}});
      continue;
    }
    auto colon = line.find(':');
    if (colon == std::string_view::npos) {
      throw ParseError(line_no, "expected 'label: value'");
    }
    if (blocks.empty()) {
      throw ParseError(line_no, "field before first almanac block banner");
    }
    auto field = detail::match_label(line.substr(0, colon));
    if (!field) {
      throw ParseError(line_no, "unknown YUMA field '" + std::string(line.substr(0, colon)) + "'");
    }
    auto raw = mpdetect::detail::trim(line.substr(colon + 1));
    auto value = mpdetect::detail::to_double(raw);
    if (!value) {
      throw ParseError(line_no, "field '" +
                                  std::string(detail::kYumaLabels[static_cast<std::size_t>(*field)]) +
                                  "' value '" + std::string(raw) + "' is not numeric");
    }
    blocks.back().values[static_cast<std::size_t>(*field)] = *value;
  }

  std::vector<AlmanacEntry> entries;
  std::set<int> seen;
  for (const auto& b : blocks) {
    for (std::size_t f = 0; f < kFieldCount; ++f) {
      if (!b.values[f]) {
        throw ParseError(b.line, "almanac block " + std::to_string(b.ordinal) + ": missing field '" +
                                   std::string(detail::kYumaLabels[f]) + "'");
      }
    }
    auto get = [&](YumaField f) { return *b.values[static_cast<std::size_t>(f)]; };
    AlmanacEntry e;
    e.prn = static_cast<int>(get(YumaField::id));
    e.health = static_cast<int>(get(YumaField::health));
    e.eccentricity = get(YumaField::eccentricity);
    e.toa = get(YumaField::toa);
    e.inclination = get(YumaField::inclination);
    e.raan_rate = get(YumaField::raan_rate);
    e.sqrt_a = get(YumaField::sqrt_a);
    e.raan = get(YumaField::raan);
    e.arg_perigee = get(YumaField::arg_perigee);
    e.mean_anomaly = get(YumaField::mean_anomaly);
    e.af0 = get(YumaField::af0);
    e.af1 = get(YumaField::af1);
    e.week = static_cast<int>(get(YumaField::week));
    validate(e);
    if (!seen.insert(e.prn).second) {
      throw DuplicateError("almanac block " + std::to_string(b.ordinal) + ": PRN " +
                           std::to_string(e.prn) + " appears twice");
    }
    entries.push_back(e);
  }
  return entries;
}

/// Solves E - e sin E = M. Newton from E = M, falling back to bisection on
/// [M - e, M + e] when Newton stalls or leaves the bracket. Throws
/// NumericalError when both iteration caps are exhausted.
inline double solve_kepler(double mean_anomaly, double eccentricity, double tol = kKeplerTolerance,
                           int newton_cap = kKeplerNewtonIterations,
                           int bisection_cap = kKeplerBisectionIterations)
{
  if (!(eccentricity >= 0.0 && eccentricity < 1.0) || !(tol > 0.0) ||
      !std::isfinite(mean_anomaly)) {
    throw std::invalid_argument("solve_kepler: require 0 <= e < 1, tol > 0, finite M");
  }
  const double m = mean_anomaly;
  const double e = eccentricity;
  auto f = [&](double ea) { return ea - e * std::sin(ea) - m; };

  double lo = m - e;
  double hi = m + e;
  double ea = m;
  for (int i = 0; i < newton_cap; ++i) {
    const double r = f(ea);
    if (std::abs(r) <= tol) {
      return ea;
    }
    const double next = ea - r / (1.0 - e * std::cos(ea));
    if (!(next >= lo && next <= hi)) {
      break;
    }
    ea = next;
  }

  // f(lo) <= 0 <= f(hi) since |e sin E| <= e.
  for (int i = 0; i < bisection_cap; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double r = f(mid);
    if (std::abs(r) <= tol) {
      return mid;
    }
    if (mid <= lo || mid >= hi) {
      break; // bracket exhausted at double resolution
    }
    if (r < 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  throw NumericalError("solve_kepler: no convergence for M=" + mpdetect::detail::format_double(m) +
                       ", e=" + mpdetect::detail::format_double(e) +
                       ", tol=" + mpdetect::detail::format_double(tol));
}

/// Reference time of the almanac in continuous GPS seconds, resolving a
/// 10-bit week to the rollover epoch nearest `near`.
inline double reference_time(const AlmanacEntry& entry, GpsTime near)
{
  double week = entry.week;
  if (entry.week < 1024) {
    const double near_week = (near.seconds - entry.toa) / kSecondsPerWeek;
    week += 1024.0 * std::round((near_week - entry.week) / 1024.0);
  }
  return week * kSecondsPerWeek + entry.toa;
}

/// ECEF position (m) of the satellite at GPS time `t`.
inline Vec3 propagate(const AlmanacEntry& entry, GpsTime t)
{
  const double tk = t.seconds - reference_time(entry, t);
  if (std::abs(tk) > kSecondsPerWeek) {
    throw ValidationError("PRN " + std::to_string(entry.prn) +
                          ": epoch is more than one week from almanac toa");
  }
  const double a = entry.semi_major_axis();
  const double e = entry.eccentricity;
  const double n0 = std::sqrt(kGpsMu / (a * a * a));
  const double mk = entry.mean_anomaly + n0 * tk;
  const double ek = solve_kepler(mk, e);

  const double nu = std::atan2(std::sqrt(1.0 - e * e) * std::sin(ek), std::cos(ek) - e);
  const double phi = nu + entry.arg_perigee;
  const double r = a * (1.0 - e * std::cos(ek));
  const double xp = r * std::cos(phi);
  const double yp = r * std::sin(phi);

  const double omega = entry.raan + (entry.raan_rate - kEarthRotationRate) * tk -
                       kEarthRotationRate * entry.toa;
  const double ci = std::cos(entry.inclination);
  const double si = std::sin(entry.inclination);
  const double co = std::cos(omega);
  const double so = std::sin(omega);
  return {xp * co - yp * ci * so, xp * so + yp * ci * co, yp * si};
}

inline Vec3 geodetic_to_ecef(const GeodeticPosition& p)
{
  const double lat = p.lat_deg * kRadPerDeg;
  const double lon = p.lon_deg * kRadPerDeg;
  const double sl = std::sin(lat);
  const double cl = std::cos(lat);
  const double n = kWgs84A / std::sqrt(1.0 - kWgs84E2 * sl * sl);
  return {(n + p.height_m) * cl * std::cos(lon), (n + p.height_m) * cl * std::sin(lon),
          (n * (1.0 - kWgs84E2) + p.height_m) * sl};
}

/// Iterative inverse of geodetic_to_ecef.
inline GeodeticPosition ecef_to_geodetic(const Vec3& r)
{
  const double p = std::hypot(r.x, r.y);
  const double lon = std::atan2(r.y, r.x);
  double lat = std::atan2(r.z, p * (1.0 - kWgs84E2));
  for (int i = 0; i < 20; ++i) {
    const double sl = std::sin(lat);
    const double n = kWgs84A / std::sqrt(1.0 - kWgs84E2 * sl * sl);
    const double h = p * std::cos(lat) + r.z * sl - kWgs84A * std::sqrt(1.0 - kWgs84E2 * sl * sl);
    const double next = std::atan2(r.z, p * (1.0 - kWgs84E2 * n / (n + h)));
    const bool done = std::abs(next - lat) < 1e-15;
    lat = next;
    if (done) {
      break;
    }
  }
  const double sl = std::sin(lat);
  const double h = p * std::cos(lat) + r.z * sl - kWgs84A * std::sqrt(1.0 - kWgs84E2 * sl * sl);
  return {lat * kDegPerRad, lon * kDegPerRad, h};
}

/// East, north, up unit vectors at `p`, in ECEF.
struct EnuBasis
{
  Vec3 east;
  Vec3 north;
  Vec3 up;
};

inline EnuBasis enu_basis(const GeodeticPosition& p)
{
  const double lat = p.lat_deg * kRadPerDeg;
  const double lon = p.lon_deg * kRadPerDeg;
  const double sl = std::sin(lat);
  const double cl = std::cos(lat);
  const double so = std::sin(lon);
  const double co = std::cos(lon);
  return {{-so, co, 0.0}, {-sl * co, -sl * so, cl}, {cl * co, cl * so, sl}};
}

inline LookAngles look_angles(const Vec3& sat_ecef, const GeodeticPosition& rx)
{
  const Vec3 los = sat_ecef - geodetic_to_ecef(rx);
  const double range = norm(los);
  if (!(range > 0.0)) {
    throw GeometryError("look_angles: satellite and receiver coincide");
  }
  const auto basis = enu_basis(rx);
  const double e = dot(los, basis.east);
  const double n = dot(los, basis.north);
  const double u = dot(los, basis.up);
  const double el = std::asin(std::clamp(u / range, -1.0, 1.0)) * kDegPerRad;
  double az = std::atan2(e, n) * kDegPerRad;
  if (az < 0.0) {
    az += 360.0;
  }
  if (az >= 360.0) {
    az = 0.0;
  }
  return {el, az};
}

/// Unit vector toward a satellite in the local east/north/up frame.
inline Vec3 enu_direction(const LookAngles& look)
{
  const double el = look.elevation_deg * kRadPerDeg;
  const double az = look.azimuth_deg * kRadPerDeg;
  return {std::cos(el) * std::sin(az), std::cos(el) * std::cos(az), std::sin(el)};
}

inline const AlmanacEntry* find_prn(const std::vector<AlmanacEntry>& almanac, int prn)
{
  auto it = std::find_if(almanac.begin(), almanac.end(),
                         [prn](const AlmanacEntry& e) { return e.prn == prn; });
  return it == almanac.end() ? nullptr : &*it;
}

inline SatelliteState satellite_state(const AlmanacEntry& entry, std::int64_t unix_epoch,
                                      const GeodeticPosition& rx,
                                      int leap_seconds = kDefaultLeapSeconds)
{
  SatelliteState s;
  s.prn = entry.prn;
  s.epoch = unix_epoch;
  s.ecef = propagate(entry, unix_to_gps(unix_epoch, leap_seconds));
  const auto look = look_angles(s.ecef, rx);
  s.elevation_deg = look.elevation_deg;
  s.azimuth_deg = look.azimuth_deg;
  return s;
}

/// Fills elevation_deg on every record. All PRNs absent from the almanac are
/// reported together.
inline std::vector<obs::ObservationRecord> annotate_elevations(
  std::vector<obs::ObservationRecord> records, const std::vector<AlmanacEntry>& almanac,
  const GeodeticPosition& rx, int leap_seconds = kDefaultLeapSeconds)
{
  std::set<int> missing;
  for (const auto& r : records) {
    if (!find_prn(almanac, r.prn)) {
      missing.insert(r.prn);
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (int prn : missing) {
      list += (list.empty() ? "" : ", ") + std::to_string(prn);
    }
    throw MissingAlmanacError("no almanac entry for PRN " + list);
  }
  for (auto& r : records) {
    r.elevation_deg = satellite_state(*find_prn(almanac, r.prn), r.epoch, rx, leap_seconds).elevation_deg;
  }
  return records;
}

} // namespace mpdetect::satgeo
