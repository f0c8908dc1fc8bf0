#pragma once

// Elevation-dependent threshold detector. Calibration bins the C/N0
// difference of low-multipath data by elevation and stores the per-bin mean;
// a measurement whose difference falls strictly below the interpolated mean
// at its elevation is declared multipath.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpdetect/detail/text.hpp"
#include "mpdetect/error.hpp"
#include "mpdetect/obs.hpp"

namespace mpdetect::detector
{

inline constexpr double kDefaultBinWidthDeg = 1.0;
inline constexpr double kDefaultAggregationRatio = 0.5;

struct ThresholdBin
{
  double center_deg = 0.0;
  double mean_db = 0.0;
  std::size_t count = 0;

  friend bool operator==(const ThresholdBin&, const ThresholdBin&) = default;
};

struct ThresholdCurve
{
  double bin_width_deg = kDefaultBinWidthDeg;
  std::vector<ThresholdBin> bins; ///< strictly ascending centers, empty bins omitted
  double valid_min_deg = 0.0;
  double valid_max_deg = 0.0;

  friend bool operator==(const ThresholdCurve&, const ThresholdCurve&) = default;
};

enum class Verdict
{
  multipath,
  clean,
  out_of_range
};

inline std::string_view to_string(Verdict v)
{
  switch (v) {
    case Verdict::multipath: return "MULTIPATH";
    case Verdict::clean: return "CLEAN";
    case Verdict::out_of_range: return "OUT_OF_RANGE";
  }
  return "?";
}

inline std::optional<Verdict> verdict_from_string(std::string_view s)
{
  if (s == "MULTIPATH") return Verdict::multipath;
  if (s == "CLEAN") return Verdict::clean;
  if (s == "OUT_OF_RANGE") return Verdict::out_of_range;
  return std::nullopt;
}

struct Decision
{
  std::int64_t epoch = 0;
  int prn = 0;
  double elevation_deg = 0.0;
  double diff_db = 0.0;
  double threshold_db = 0.0; ///< clamped end value when out of range
  Verdict verdict = Verdict::clean;

  friend bool operator==(const Decision&, const Decision&) = default;
};

struct SatelliteVerdict
{
  int prn = 0;
  std::int64_t start_epoch = 0;
  std::int64_t end_epoch = 0;
  std::size_t n_multipath = 0;
  std::size_t n_clean = 0;
  double fraction_multipath = 0.0;
  bool flagged = false;
};

struct AggregateResult
{
  std::vector<SatelliteVerdict> verdicts;
  std::vector<int> omitted_prns; ///< PRNs with no in-range decision
};

struct ThresholdLookup
{
  double threshold_db = 0.0;
  bool in_range = false;
};

inline void validate(const ThresholdCurve& curve)
{
  if (curve.bins.empty()) {
    throw InvalidCurveError("threshold curve has no bins");
  }
  if (!(curve.bin_width_deg > 0.0)) {
    throw InvalidCurveError("bin width must be positive");
  }
  for (std::size_t i = 0; i < curve.bins.size(); ++i) {
    const auto& b = curve.bins[i];
    if (b.count < 1 || !std::isfinite(b.mean_db) || !std::isfinite(b.center_deg)) {
      throw InvalidCurveError("bin " + std::to_string(i) + " is malformed");
    }
    if (i > 0 && !(curve.bins[i - 1].center_deg < b.center_deg)) {
      throw InvalidCurveError("bin centers are not strictly ascending");
    }
  }
  if (curve.valid_min_deg != curve.bins.front().center_deg ||
      curve.valid_max_deg != curve.bins.back().center_deg) {
    throw InvalidCurveError("valid range does not match first/last bin centers");
  }
}

/// Bins records by elevation into [k w, (k+1) w) and stores the mean C/N0
/// difference of each occupied bin at its center (k + 0.5) w.
inline ThresholdCurve calibrate(const std::vector<obs::ObservationRecord>& records,
                                double bin_width_deg = kDefaultBinWidthDeg)
{
  if (!(bin_width_deg > 0.0)) {
    throw std::invalid_argument("calibrate: bin width must be positive");
  }
  struct Acc
  {
    double sum = 0.0;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    std::size_t n = 0;
  };
  std::map<std::int64_t, Acc> bins;
  for (const auto& r : records) {
    if (!r.elevation_deg) {
      throw std::invalid_argument("calibrate: record without elevation (epoch " +
                                  std::to_string(r.epoch) + ", prn " + std::to_string(r.prn) + ")");
    }
    const double d = obs::cn0_difference(r).value;
    auto k = static_cast<std::int64_t>(std::floor(*r.elevation_deg / bin_width_deg));
    auto& acc = bins[k];
    acc.sum += d;
    acc.lo = std::min(acc.lo, d);
    acc.hi = std::max(acc.hi, d);
    ++acc.n;
  }
  if (bins.empty()) {
    throw EmptyCalibrationError("no calibration samples");
  }

  ThresholdCurve curve;
  curve.bin_width_deg = bin_width_deg;
  for (const auto& [k, acc] : bins) {
    // Rounding in sum / n can leave the mean one ulp outside the sample range.
    const double mean = std::clamp(acc.sum / static_cast<double>(acc.n), acc.lo, acc.hi);
    curve.bins.push_back({(static_cast<double>(k) + 0.5) * bin_width_deg, mean, acc.n});
  }
  curve.valid_min_deg = curve.bins.front().center_deg;
  curve.valid_max_deg = curve.bins.back().center_deg;
  return curve;
}

/// Piecewise-linear in elevation between occupied bin centers; clamps to the
/// end values outside the valid range and reports it.
inline ThresholdLookup threshold_at(const ThresholdCurve& curve, double elevation_deg)
{
  if (curve.bins.empty()) {
    throw InvalidCurveError("threshold curve has no bins");
  }
  const auto& bins = curve.bins;
  const bool in_range = elevation_deg >= curve.valid_min_deg && elevation_deg <= curve.valid_max_deg;
  if (elevation_deg <= bins.front().center_deg) {
    return {bins.front().mean_db, in_range};
  }
  if (elevation_deg >= bins.back().center_deg) {
    return {bins.back().mean_db, in_range};
  }
  auto hi = std::upper_bound(bins.begin(), bins.end(), elevation_deg,
                             [](double el, const ThresholdBin& b) { return el < b.center_deg; });
  auto lo = std::prev(hi);
  if (lo->center_deg == elevation_deg) {
    return {lo->mean_db, in_range};
  }
  const double t = (elevation_deg - lo->center_deg) / (hi->center_deg - lo->center_deg);
  return {std::lerp(lo->mean_db, hi->mean_db, t), in_range};
}

inline Decision classify(const obs::ObservationRecord& record, const ThresholdCurve& curve)
{
  if (!record.elevation_deg) {
    throw std::invalid_argument("classify: record without elevation");
  }
  Decision d;
  d.epoch = record.epoch;
  d.prn = record.prn;
  d.elevation_deg = *record.elevation_deg;
  d.diff_db = obs::cn0_difference(record).value;
  const auto lookup = threshold_at(curve, d.elevation_deg);
  d.threshold_db = lookup.threshold_db;
  if (!lookup.in_range) {
    d.verdict = Verdict::out_of_range;
  } else {
    d.verdict = d.diff_db < d.threshold_db ? Verdict::multipath : Verdict::clean;
  }
  return d;
}

/// Per-PRN share of in-range decisions that were MULTIPATH; a satellite is
/// flagged when that share exceeds `ratio`.
inline AggregateResult aggregate(const std::vector<Decision>& decisions,
                                 double ratio = kDefaultAggregationRatio)
{
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw std::invalid_argument("aggregate: ratio must be in (0, 1]");
  }
  std::map<int, SatelliteVerdict> by_prn;
  for (const auto& d : decisions) {
    auto [it, inserted] = by_prn.try_emplace(d.prn);
    auto& v = it->second;
    if (inserted) {
      v.prn = d.prn;
      v.start_epoch = std::numeric_limits<std::int64_t>::max();
      v.end_epoch = std::numeric_limits<std::int64_t>::min();
    }
    if (d.verdict == Verdict::out_of_range) {
      continue;
    }
    v.start_epoch = std::min(v.start_epoch, d.epoch);
    v.end_epoch = std::max(v.end_epoch, d.epoch);
    if (d.verdict == Verdict::multipath) {
      ++v.n_multipath;
    } else {
      ++v.n_clean;
    }
  }

  AggregateResult out;
  for (auto& [prn, v] : by_prn) {
    const auto n = v.n_multipath + v.n_clean;
    if (n == 0) {
      out.omitted_prns.push_back(prn);
      continue;
    }
    v.fraction_multipath = static_cast<double>(v.n_multipath) / static_cast<double>(n);
    v.flagged = v.fraction_multipath > ratio;
    out.verdicts.push_back(v);
  }
  return out;
}

// ---- persistence -----------------------------------------------------------

inline std::string curve_to_json(const ThresholdCurve& curve)
{
  nlohmann::ordered_json j;
  j["bin_width_deg"] = curve.bin_width_deg;
  auto bins = nlohmann::ordered_json::array();
  for (const auto& b : curve.bins) {
    nlohmann::ordered_json jb;
    jb["center_deg"] = b.center_deg;
    jb["mean_db"] = b.mean_db;
    jb["count"] = b.count;
    bins.push_back(std::move(jb));
  }
  j["bins"] = std::move(bins);
  j["valid_range"] = {curve.valid_min_deg, curve.valid_max_deg};
  return j.dump(2) + "\n";
}

inline ThresholdCurve curve_from_json(std::string_view text)
{
  ThresholdCurve curve;
  try {
    auto j = nlohmann::json::parse(text);
    curve.bin_width_deg = j.at("bin_width_deg").get<double>();
    for (const auto& jb : j.at("bins")) {
      curve.bins.push_back({jb.at("center_deg").get<double>(), jb.at("mean_db").get<double>(),
                            jb.at("count").get<std::size_t>()});
    }
    const auto& range = j.at("valid_range");
    if (!range.is_array() || range.size() != 2) {
      throw InvalidCurveError("valid_range must be [lo, hi]");
    }
    curve.valid_min_deg = range[0].get<double>();
    curve.valid_max_deg = range[1].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("threshold curve JSON: ") + e.what());
  }
  validate(curve);
  return curve;
}

inline constexpr std::string_view kDecisionHeader =
  "epoch,prn,elevation_deg,diff_db,threshold_db,verdict";

inline std::string decisions_to_csv(const std::vector<Decision>& decisions)
{
  using mpdetect::detail::format_double;
  std::string out(kDecisionHeader);
  out += '\n';
  for (const auto& d : decisions) {
    out += std::to_string(d.epoch) + ',' + std::to_string(d.prn) + ',' +
           format_double(d.elevation_deg) + ',' + format_double(d.diff_db) + ',' +
           format_double(d.threshold_db) + ',' + std::string(to_string(d.verdict)) + '\n';
  }
  return out;
}

inline std::vector<Decision> decisions_from_csv(std::string_view text)
{
  auto lines = mpdetect::detail::split_lines(text);
  if (lines.empty() || mpdetect::detail::trim(lines.front()) != kDecisionHeader) {
    throw FormatError(1, "expected header '" + std::string(kDecisionHeader) + "'");
  }
  std::vector<Decision> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    auto f = mpdetect::detail::split(lines[i], ',');
    if (f.size() != 6) {
      throw FormatError(line_no, "expected 6 fields, got " + std::to_string(f.size()));
    }
    auto epoch = mpdetect::detail::to_int(f[0]);
    auto prn = mpdetect::detail::to_int(f[1]);
    auto el = mpdetect::detail::to_double(f[2]);
    auto diff = mpdetect::detail::to_double(f[3]);
    auto thr = mpdetect::detail::to_double(f[4]);
    auto verdict = verdict_from_string(mpdetect::detail::trim(f[5]));
    if (!epoch || !prn || !el || !diff || !thr || !verdict) {
      throw ParseError(line_no, "malformed decision row");
    }
    out.push_back({*epoch, static_cast<int>(*prn), *el, *diff, *thr, *verdict});
  }
  return out;
}

} // namespace mpdetect::detector
