#pragma once

// Dual-polarized C/N0 observations: CSV ingestion, quantization and the
// RHCP - LHCP difference that every downstream stage works on.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "mpdetect/detail/text.hpp"
#include "mpdetect/error.hpp"

namespace mpdetect::obs
{

inline constexpr double kCn0MinDbHz = 0.0;
inline constexpr double kCn0MaxDbHz = 60.0;
inline constexpr double kQuantizationStepDb = 1.0;
inline constexpr int kMinPrn = 1;
inline constexpr int kMaxPrn = 32;

inline constexpr std::string_view kObservationHeader =
  "epoch_unix_s,prn,cn0_rhcp_dbhz,cn0_lhcp_dbhz";
inline constexpr std::string_view kSingleChannelHeader =
  "epoch_unix_s,prn,channel,cn0_dbhz";

struct ObservationRecord
{
  std::int64_t epoch = 0; ///< Unix seconds
  int prn = 0;
  std::optional<double> cn0_rhcp; ///< dB-Hz
  std::optional<double> cn0_lhcp; ///< dB-Hz
  std::optional<double> elevation_deg;

  bool complete() const noexcept { return cn0_rhcp && cn0_lhcp; }

  friend bool operator==(const ObservationRecord&, const ObservationRecord&) = default;
};

struct Cn0Difference
{
  double value = 0.0; ///< dB, RHCP minus LHCP
};

/// Parsed dataset plus the number of rows dropped because a channel was missing.
struct ObservationSet
{
  std::vector<ObservationRecord> records;
  std::size_t dropped = 0;
};

/// Nearest multiple of `step`; halfway values round away from zero.
inline double quantize_cn0(double value, double step = kQuantizationStepDb)
{
  if (!(step > 0.0)) {
    throw std::invalid_argument("quantize_cn0: step must be positive");
  }
  return std::round(value / step) * step;
}

inline Cn0Difference cn0_difference(const ObservationRecord& r)
{
  if (!r.complete()) {
    throw IncompleteRecordError("epoch " + std::to_string(r.epoch) + " prn " +
                                std::to_string(r.prn) + ": missing " +
                                (r.cn0_rhcp ? "LHCP" : "RHCP") + " channel");
  }
  return {*r.cn0_rhcp - *r.cn0_lhcp};
}

inline void sort_records(std::vector<ObservationRecord>& records)
{
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.epoch, a.prn) < std::tie(b.epoch, b.prn);
  });
}

namespace detail
{

inline std::int64_t parse_epoch(std::string_view field, std::size_t line)
{
  auto v = mpdetect::detail::to_int(mpdetect::detail::trim(field));
  if (!v) {
    throw ParseError(line, "epoch '" + std::string(field) + "' is not an integer");
  }
  return *v;
}

inline int parse_prn(std::string_view field, std::size_t line)
{
  auto v = mpdetect::detail::to_int(mpdetect::detail::trim(field));
  if (!v) {
    throw ParseError(line, "prn '" + std::string(field) + "' is not an integer");
  }
  if (*v < kMinPrn || *v > kMaxPrn) {
    throw ValidationError("line " + std::to_string(line) + ": prn " +
                          std::to_string(*v) + " outside 1-32");
  }
  return static_cast<int>(*v);
}

/// Empty field means the channel is missing.
inline std::optional<double> parse_cn0(std::string_view field, std::size_t line)
{
  field = mpdetect::detail::trim(field);
  if (field.empty()) {
    return std::nullopt;
  }
  auto v = mpdetect::detail::to_double(field);
  if (!v || !std::isfinite(*v)) {
    throw ParseError(line, "C/N0 '" + std::string(field) + "' is not a number");
  }
  if (*v < kCn0MinDbHz || *v > kCn0MaxDbHz) {
    throw ValidationError("line " + std::to_string(line) + ": C/N0 " +
                          std::string(field) + " dB-Hz outside [0, 60]");
  }
  return quantize_cn0(*v);
}

inline std::vector<std::string_view> checked_lines(std::string_view text,
                                                   std::string_view header)
{
  auto lines = mpdetect::detail::split_lines(text);
  if (lines.empty()) {
    throw FormatError(1, "missing header");
  }
  if (mpdetect::detail::trim(lines.front()) != header) {
    throw FormatError(1, "expected header '" + std::string(header) + "'");
  }
  return lines;
}

} // namespace detail

/// Parses the merged observation CSV. Rows lacking one channel are dropped and
/// counted; the retained records come back sorted by (epoch, prn).
inline ObservationSet parse_observations(std::string_view text)
{
  auto lines = detail::checked_lines(text, kObservationHeader);

  ObservationSet out;
  std::vector<std::size_t> line_of;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    auto fields = mpdetect::detail::split(lines[i], ',');
    if (fields.size() != 4) {
      throw FormatError(line_no, "expected 4 fields, got " + std::to_string(fields.size()));
    }
    ObservationRecord rec;
    rec.epoch = detail::parse_epoch(fields[0], line_no);
    rec.prn = detail::parse_prn(fields[1], line_no);
    rec.cn0_rhcp = detail::parse_cn0(fields[2], line_no);
    rec.cn0_lhcp = detail::parse_cn0(fields[3], line_no);
    if (!rec.complete()) {
      ++out.dropped;
      continue;
    }
    out.records.push_back(rec);
    line_of.push_back(line_no);
  }

  std::vector<std::size_t> order(out.records.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ra = out.records[a];
    const auto& rb = out.records[b];
    return std::tie(ra.epoch, ra.prn) < std::tie(rb.epoch, rb.prn);
  });
  std::vector<ObservationRecord> sorted;
  sorted.reserve(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& rec = out.records[order[k]];
    if (!sorted.empty() && sorted.back().epoch == rec.epoch && sorted.back().prn == rec.prn) {
      throw DuplicateError("duplicate (epoch " + std::to_string(rec.epoch) + ", prn " +
                           std::to_string(rec.prn) + ") at lines " +
                           std::to_string(line_of[order[k - 1]]) + " and " +
                           std::to_string(line_of[order[k]]));
    }
    sorted.push_back(rec);
  }
  out.records = std::move(sorted);
  return out;
}

inline std::string serialize_observations(const std::vector<ObservationRecord>& records)
{
  using mpdetect::detail::format_double;
  std::string out(kObservationHeader);
  out += '\n';
  for (const auto& r : records) {
    out += std::to_string(r.epoch);
    out += ',';
    out += std::to_string(r.prn);
    out += ',';
    if (r.cn0_rhcp) {
      out += format_double(*r.cn0_rhcp);
    }
    out += ',';
    if (r.cn0_lhcp) {
      out += format_double(*r.cn0_lhcp);
    }
    out += '\n';
  }
  return out;
}

/// Joins single-channel logs (one per receiver, or one file holding both) on
/// (epoch, prn). Keys seen on only one channel are dropped and counted.
inline ObservationSet merge(const std::vector<std::string_view>& single_channel_texts)
{
  struct Pending
  {
    std::optional<double> rhcp;
    std::optional<double> lhcp;
  };
  std::map<std::pair<std::int64_t, int>, Pending> joined;
  std::size_t missing_rows = 0;

  for (auto text : single_channel_texts) {
    auto lines = detail::checked_lines(text, kSingleChannelHeader);
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const std::size_t line_no = i + 1;
      auto fields = mpdetect::detail::split(lines[i], ',');
      if (fields.size() != 4) {
        throw FormatError(line_no, "expected 4 fields, got " + std::to_string(fields.size()));
      }
      auto epoch = detail::parse_epoch(fields[0], line_no);
      auto prn = detail::parse_prn(fields[1], line_no);
      auto channel = mpdetect::detail::trim(fields[2]);
      if (channel != "R" && channel != "L") {
        throw FormatError(line_no, "channel must be R or L, got '" + std::string(channel) + "'");
      }
      auto cn0 = detail::parse_cn0(fields[3], line_no);
      if (!cn0) {
        ++missing_rows;
        continue;
      }
      auto& slot = channel == "R" ? joined[{epoch, prn}].rhcp : joined[{epoch, prn}].lhcp;
      if (slot) {
        throw DuplicateError("duplicate (epoch " + std::to_string(epoch) + ", prn " +
                             std::to_string(prn) + ", channel " + std::string(channel) +
                             ") at line " + std::to_string(line_no));
      }
      slot = cn0;
    }
  }

  ObservationSet out;
  out.dropped = missing_rows;
  for (const auto& [key, p] : joined) {
    if (!p.rhcp || !p.lhcp) {
      ++out.dropped;
      continue;
    }
    out.records.push_back({key.first, key.second, p.rhcp, p.lhcp, std::nullopt});
  }
  return out;
}

} // namespace mpdetect::obs
