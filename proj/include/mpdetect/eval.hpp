#pragma once

// Synthetic dual-channel observations driven by ray-traced labels, and
// confusion-matrix scoring of detector decisions against those labels.
// Every number produced here is synthetic; none of it is measured data.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpdetect/detail/text.hpp"
#include "mpdetect/detector.hpp"
#include "mpdetect/error.hpp"
#include "mpdetect/obs.hpp"
#include "mpdetect/raytracer.hpp"

namespace mpdetect::eval
{

using raytracer::Condition;

/// Linear between knots, constant beyond the first and last knot.
class PiecewiseLinear
{
public:
  PiecewiseLinear() = default;
  explicit PiecewiseLinear(std::vector<std::pair<double, double>> knots) : knots_(std::move(knots))
  {
    if (knots_.empty()) {
      throw std::invalid_argument("PiecewiseLinear: no knots");
    }
    for (std::size_t i = 1; i < knots_.size(); ++i) {
      if (!(knots_[i - 1].first < knots_[i].first)) {
        throw std::invalid_argument("PiecewiseLinear: knots must be strictly ascending");
      }
    }
  }

  double operator()(double x) const
  {
    if (x <= knots_.front().first) return knots_.front().second;
    if (x >= knots_.back().first) return knots_.back().second;
    auto hi = std::upper_bound(knots_.begin(), knots_.end(), x,
                               [](double v, const auto& k) { return v < k.first; });
    auto lo = std::prev(hi);
    const double t = (x - lo->first) / (hi->first - lo->first);
    return std::lerp(lo->second, hi->second, t);
  }

  const std::vector<std::pair<double, double>>& knots() const noexcept { return knots_; }

private:
  std::vector<std::pair<double, double>> knots_{{0.0, 0.0}};
};

struct SynthesisModel
{
  /// Direct-signal RHCP C/N0 versus elevation.
  PiecewiseLinear clean_rhcp_db{{{0.0, 38.0}, {30.0, 45.0}, {90.0, 50.0}}};
  /// RHCP - LHCP for an uncontaminated signal: 6 dB at 10 deg rising to 14 dB at 35 deg.
  PiecewiseLinear clean_diff_db{{{0.0, 6.0}, {10.0, 6.0}, {35.0, 14.0}, {90.0, 14.0}}};
  double multipath_diff_penalty_db = 8.0;
  double noise_sigma_db = 1.5;
  std::uint64_t seed = 1;
};

inline void validate(const SynthesisModel& m)
{
  if (!(m.multipath_diff_penalty_db > 0.0)) {
    throw ValidationError("synthesis penalty must be positive");
  }
  if (!(m.noise_sigma_db >= 0.0)) {
    throw ValidationError("synthesis noise sigma must be non-negative");
  }
  for (const auto* curve : {&m.clean_rhcp_db, &m.clean_diff_db}) {
    if (curve->knots().front().first > 0.0 || curve->knots().back().first < 90.0) {
      throw ValidationError("synthesis curves must cover [0, 90] degrees");
    }
  }
}

struct LabeledEpoch
{
  std::int64_t epoch = 0;
  int prn = 0;
  double elevation_deg = 0.0;
  Condition label = Condition::blocked;
};

inline std::vector<LabeledEpoch> labels_from_reports(const raytracer::TraceReportFile& file)
{
  std::vector<LabeledEpoch> out;
  out.reserve(file.reports.size());
  for (const auto& r : file.reports) {
    out.push_back({r.epoch, r.prn, r.elevation_deg, r.label.label});
  }
  return out;
}

/// Each (epoch, prn) draws from its own generator seeded by (seed, epoch, prn),
/// so the output does not depend on input order or on how the work is split.
inline std::vector<obs::ObservationRecord> synthesize(const std::vector<LabeledEpoch>& labels,
                                                      const SynthesisModel& model)
{
  validate(model);
  std::vector<obs::ObservationRecord> out;
  out.reserve(labels.size());
  for (const auto& l : labels) {
    if (l.label == Condition::blocked) {
      continue;
    }
    const auto epoch = static_cast<std::uint64_t>(l.epoch);
    std::seed_seq seq{static_cast<std::uint32_t>(model.seed), static_cast<std::uint32_t>(model.seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32),
                      static_cast<std::uint32_t>(l.prn)};
    std::mt19937_64 rng(seq);
    double rhcp_noise = 0.0;
    double diff_noise = 0.0;
    if (model.noise_sigma_db > 0.0) {
      std::normal_distribution<double> noise(0.0, model.noise_sigma_db);
      rhcp_noise = noise(rng);
      diff_noise = noise(rng);
    }
    double diff = model.clean_diff_db(l.elevation_deg) + diff_noise;
    if (raytracer::is_multipath(l.label)) {
      diff -= model.multipath_diff_penalty_db;
    }
    const double rhcp = std::clamp(obs::quantize_cn0(model.clean_rhcp_db(l.elevation_deg) + rhcp_noise),
                                   obs::kCn0MinDbHz, obs::kCn0MaxDbHz);
    const double lhcp = std::clamp(rhcp - obs::quantize_cn0(diff), obs::kCn0MinDbHz, obs::kCn0MaxDbHz);
    out.push_back({l.epoch, l.prn, rhcp, lhcp, l.elevation_deg});
  }
  obs::sort_records(out);
  return out;
}

struct Confusion
{
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t true_negative = 0;
  std::size_t false_negative = 0;

  std::size_t total() const noexcept
  {
    return true_positive + false_positive + true_negative + false_negative;
  }
  std::optional<double> detection_rate() const
  {
    const auto d = true_positive + false_negative;
    if (d == 0) return std::nullopt;
    return static_cast<double>(true_positive) / static_cast<double>(d);
  }
  std::optional<double> false_alarm_rate() const
  {
    const auto d = false_positive + true_negative;
    if (d == 0) return std::nullopt;
    return static_cast<double>(false_positive) / static_cast<double>(d);
  }
};

struct EvalReport
{
  Confusion confusion;
  std::size_t out_of_range = 0;
  std::map<int, Confusion> per_prn;

  std::optional<double> detection_rate() const { return confusion.detection_rate(); }
  std::optional<double> false_alarm_rate() const { return confusion.false_alarm_rate(); }
};

/// Positives are LOS_PLUS_NLOS and NLOS_ONLY labels. OUT_OF_RANGE decisions
/// are counted separately and not scored.
inline EvalReport score(const std::vector<detector::Decision>& decisions,
                        const std::vector<LabeledEpoch>& labels)
{
  std::map<std::pair<std::int64_t, int>, Condition> truth;
  for (const auto& l : labels) {
    if (!truth.emplace(std::pair{l.epoch, l.prn}, l.label).second) {
      throw DuplicateError("duplicate label for (epoch " + std::to_string(l.epoch) + ", prn " +
                           std::to_string(l.prn) + ")");
    }
  }

  std::vector<std::pair<std::int64_t, int>> unmatched;
  EvalReport report;
  for (const auto& d : decisions) {
    auto it = truth.find({d.epoch, d.prn});
    if (it == truth.end()) {
      unmatched.emplace_back(d.epoch, d.prn);
      continue;
    }
    if (d.verdict == detector::Verdict::out_of_range) {
      ++report.out_of_range;
      continue;
    }
    const bool actual = raytracer::is_multipath(it->second);
    const bool predicted = d.verdict == detector::Verdict::multipath;
    for (auto* c : {&report.confusion, &report.per_prn[d.prn]}) {
      if (actual && predicted) ++c->true_positive;
      else if (!actual && predicted) ++c->false_positive;
      else if (!actual) ++c->true_negative;
      else ++c->false_negative;
    }
  }
  if (!unmatched.empty()) {
    std::sort(unmatched.begin(), unmatched.end());
    std::string list;
    for (std::size_t i = 0; i < std::min<std::size_t>(10, unmatched.size()); ++i) {
      list += (i ? ", " : "") + std::string("(") + std::to_string(unmatched[i].first) + ", " +
              std::to_string(unmatched[i].second) + ")";
    }
    throw JoinError(std::to_string(unmatched.size()) + " decision(s) without a label: " + list);
  }
  return report;
}

namespace detail
{

inline nlohmann::ordered_json confusion_json(const Confusion& c)
{
  nlohmann::ordered_json j;
  j["true_positive"] = c.true_positive;
  j["false_positive"] = c.false_positive;
  j["true_negative"] = c.true_negative;
  j["false_negative"] = c.false_negative;
  auto rate = [](std::optional<double> r) -> nlohmann::ordered_json {
    return r ? nlohmann::ordered_json(*r) : nlohmann::ordered_json(nullptr);
  };
  j["detection_rate"] = rate(c.detection_rate());
  j["false_alarm_rate"] = rate(c.false_alarm_rate());
  return j;
}

inline std::string rate_text(std::optional<double> r)
{
  if (!r) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *r);
  return buf;
}

} // namespace detail

/// Rates with a zero denominator are written as null.
inline std::string report_to_json(const EvalReport& r)
{
  nlohmann::ordered_json j = detail::confusion_json(r.confusion);
  j["out_of_range"] = r.out_of_range;
  auto per = nlohmann::ordered_json::array();
  for (const auto& [prn, c] : r.per_prn) {
    auto jp = detail::confusion_json(c);
    jp["prn"] = prn;
    per.push_back(std::move(jp));
  }
  j["per_prn"] = std::move(per);
  return j.dump(2) + "\n";
}

inline std::string report_table(const EvalReport& r)
{
  std::string out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-6s %6s %6s %6s %6s %10s %10s\n", "prn", "TP", "FP", "TN", "FN",
                "detect", "false_alm");
  out += line;
  auto row = [&](const std::string& name, const Confusion& c) {
    std::snprintf(line, sizeof(line), "%-6s %6zu %6zu %6zu %6zu %10s %10s\n", name.c_str(), c.true_positive,
                  c.false_positive, c.true_negative, c.false_negative,
                  detail::rate_text(c.detection_rate()).c_str(),
                  detail::rate_text(c.false_alarm_rate()).c_str());
    out += line;
  };
  for (const auto& [prn, c] : r.per_prn) {
    row(std::to_string(prn), c);
  }
  row("all", r.confusion);
  out += "out_of_range " + std::to_string(r.out_of_range) + "\n";
  return out;
}

} // namespace mpdetect::eval
