#pragma once

// `mpdetect` command-line front end. Kept header-only so the test suite can
// drive run() in-process.
//
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mpdetect/detector.hpp"
#include "mpdetect/error.hpp"
#include "mpdetect/eval.hpp"
#include "mpdetect/obs.hpp"
#include "mpdetect/raytracer.hpp"
#include "mpdetect/satgeo.hpp"

namespace mpdetect::cli
{

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr const char* kLeapSecondsEnv = "MPDETECT_LEAP_SECONDS";

struct RunConfig
{
  std::string subcommand;
  std::vector<std::string> inputs;
  std::string obs_path;
  std::string almanac_path;
  std::string curve_path;
  std::string scene_path;
  std::string labels_path;
  std::string decisions_path;
  std::string out_path;
  std::string plot_path;
  std::string summary_path;
  std::string epochs;

  satgeo::GeodeticPosition rx;
  double rx_east_m = 0.0;
  double rx_north_m = 0.0;
  double rx_agl_m = raytracer::kDefaultReceiverHeightM;

  double bin_width_deg = detector::kDefaultBinWidthDeg;
  double min_elevation_deg = 10.0;
  double max_elevation_deg = 35.0;
  double ratio = detector::kDefaultAggregationRatio;
  bool include_out_of_range = false;
  int max_order = raytracer::kMaxReflectionOrder;
  int leap_seconds = satgeo::kDefaultLeapSeconds;

  std::uint64_t seed = 1;
  double sigma_db = 1.5;
  double penalty_db = 8.0;
};

namespace detail
{

/// logfmt-style line on stderr.
class Log
{
public:
  Log(std::ostream& err, std::string cmd) : err_(err), cmd_(std::move(cmd)) {}

  void info(const std::string& msg, const std::string& kv = {}) { write("info", msg, kv); }
  void warn(const std::string& msg, const std::string& kv = {}) { write("warn", msg, kv); }
  void error(const std::string& msg, const std::string& kv = {}) { write("error", msg, kv); }

private:
  void write(const char* level, const std::string& msg, const std::string& kv)
  {
    std::string quoted;
    for (char c : msg) {
      quoted += c == '"' ? '\'' : c;
    }
    err_ << "level=" << level << " cmd=" << cmd_ << " msg=\"" << quoted << '"';
    if (!kv.empty()) {
      err_ << ' ' << kv;
    }
    err_ << '\n';
  }

  std::ostream& err_;
  std::string cmd_;
};

inline std::string read_file(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("cannot read '" + path + "'");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Temp file in the destination directory, then rename over the target.
inline void write_atomic(const std::string& path, const std::string& content)
{
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw DataError("cannot write '" + tmp.string() + "'");
    }
    out << content;
    out.flush();
    if (!out) {
      throw DataError("write failed for '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw DataError("cannot move output into '" + path + "': " + ec.message());
  }
}

inline void require_inputs(const std::vector<std::string>& paths)
{
  for (const auto& p : paths) {
    if (!std::filesystem::is_regular_file(p)) {
      throw DataError("input file not found: '" + p + "'");
    }
  }
}

inline void require_output(const std::string& path)
{
  if (path.empty()) {
    return;
  }
  auto dir = std::filesystem::path(path).parent_path();
  if (!dir.empty() && !std::filesystem::is_directory(dir)) {
    throw DataError("output directory does not exist: '" + dir.string() + "'");
  }
}

/// "start:end:step" (inclusive end), a comma list, or a single epoch.
inline std::vector<std::int64_t> parse_epochs(const std::string& spec)
{
  auto bad = [&] { return ValidationError("invalid --epochs '" + spec + "'"); };
  std::vector<std::int64_t> out;
  if (spec.find(':') != std::string::npos) {
    auto parts = mpdetect::detail::split(spec, ':');
    if (parts.size() != 3) throw bad();
    auto a = mpdetect::detail::to_int(parts[0]);
    auto b = mpdetect::detail::to_int(parts[1]);
    auto s = mpdetect::detail::to_int(parts[2]);
    if (!a || !b || !s || *s <= 0 || *b < *a) throw bad();
    if ((*b - *a) / *s > 10'000'000) throw bad();
    for (auto t = *a; t <= *b; t += *s) out.push_back(t);
    return out;
  }
  for (auto part : mpdetect::detail::split(spec, ',')) {
    auto v = mpdetect::detail::to_int(mpdetect::detail::trim(part));
    if (!v) throw bad();
    out.push_back(*v);
  }
  auto sorted = out;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ValidationError("--epochs lists an epoch twice: '" + spec + "'");
  }
  return out;
}

inline std::vector<obs::ObservationRecord> load_annotated(const RunConfig& cfg, Log& log)
{
  auto set = obs::parse_observations(read_file(cfg.obs_path));
  log.info("parsed observations", "records=" + std::to_string(set.records.size()) +
                                    " dropped_missing_channel=" + std::to_string(set.dropped));
  if (set.dropped > 0) {
    log.warn("rows with a single channel were dropped", "dropped=" + std::to_string(set.dropped));
  }
  auto almanac = satgeo::parse_yuma(read_file(cfg.almanac_path));
  return satgeo::annotate_elevations(std::move(set.records), almanac, cfg.rx, cfg.leap_seconds);
}

inline std::string calibration_plot_csv(const std::vector<obs::ObservationRecord>& samples,
                                        const detector::ThresholdCurve& curve)
{
  using mpdetect::detail::format_double;
  std::string out = "epoch,prn,elevation_deg,diff_db,threshold_db\n";
  for (const auto& r : samples) {
    out += std::to_string(r.epoch) + ',' + std::to_string(r.prn) + ',' + format_double(*r.elevation_deg) +
           ',' + format_double(obs::cn0_difference(r).value) + ',' +
           format_double(detector::threshold_at(curve, *r.elevation_deg).threshold_db) + '\n';
  }
  return out;
}

inline std::string summary_json(const detector::AggregateResult& agg, double ratio)
{
  nlohmann::ordered_json j;
  j["ratio"] = ratio;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& v : agg.verdicts) {
    nlohmann::ordered_json jv;
    jv["prn"] = v.prn;
    jv["window"] = {v.start_epoch, v.end_epoch};
    jv["n_multipath"] = v.n_multipath;
    jv["n_clean"] = v.n_clean;
    jv["fraction_multipath"] = v.fraction_multipath;
    jv["flagged"] = v.flagged;
    arr.push_back(std::move(jv));
  }
  j["satellites"] = std::move(arr);
  j["omitted_prns"] = agg.omitted_prns;
  return j.dump(2) + "\n";
}

// ---- subcommands -----------------------------------------------------------

inline void run_merge(const RunConfig& cfg, Log& log)
{
  std::vector<std::string> texts;
  for (const auto& p : cfg.inputs) {
    texts.push_back(read_file(p));
  }
  std::vector<std::string_view> views(texts.begin(), texts.end());
  auto set = obs::merge(views);
  write_atomic(cfg.out_path, obs::serialize_observations(set.records));
  log.info("merged", "records=" + std::to_string(set.records.size()) +
                       " dropped_missing_channel=" + std::to_string(set.dropped) + " out=" + cfg.out_path);
}

inline void run_calibrate(const RunConfig& cfg, Log& log)
{
  auto records = load_annotated(cfg, log);
  std::vector<obs::ObservationRecord> window;
  for (auto& r : records) {
    if (*r.elevation_deg >= cfg.min_elevation_deg && *r.elevation_deg < cfg.max_elevation_deg) {
      window.push_back(r);
    }
  }
  log.info("calibration window", "min_el=" + mpdetect::detail::format_double(cfg.min_elevation_deg) +
                                   " max_el=" + mpdetect::detail::format_double(cfg.max_elevation_deg) +
                                   " samples=" + std::to_string(window.size()));
  auto curve = detector::calibrate(window, cfg.bin_width_deg);
  write_atomic(cfg.out_path, detector::curve_to_json(curve));
  if (!cfg.plot_path.empty()) {
    write_atomic(cfg.plot_path, calibration_plot_csv(window, curve));
  }
  log.info("wrote threshold curve", "bins=" + std::to_string(curve.bins.size()) + " out=" + cfg.out_path);
}

inline void run_detect(const RunConfig& cfg, Log& log)
{
  auto curve = detector::curve_from_json(read_file(cfg.curve_path));
  auto records = load_annotated(cfg, log);
  std::vector<detector::Decision> all;
  std::vector<detector::Decision> written;
  for (const auto& r : records) {
    auto d = detector::classify(r, curve);
    if (cfg.include_out_of_range || d.verdict != detector::Verdict::out_of_range) {
      written.push_back(d);
    }
    all.push_back(d);
  }
  auto agg = detector::aggregate(all, cfg.ratio);
  for (int prn : agg.omitted_prns) {
    log.warn("no in-range decisions; satellite omitted", "prn=" + std::to_string(prn));
  }
  for (const auto& v : agg.verdicts) {
    log.info("satellite verdict", "prn=" + std::to_string(v.prn) +
                                    " n_multipath=" + std::to_string(v.n_multipath) +
                                    " n_clean=" + std::to_string(v.n_clean) +
                                    " fraction=" + mpdetect::detail::format_double(v.fraction_multipath) +
                                    " flagged=" + (v.flagged ? "true" : "false"));
  }
  write_atomic(cfg.out_path, detector::decisions_to_csv(written));
  if (!cfg.summary_path.empty()) {
    write_atomic(cfg.summary_path, summary_json(agg, cfg.ratio));
  }
  log.info("wrote decisions", "rows=" + std::to_string(written.size()) + " out=" + cfg.out_path);
}

inline void run_trace(const RunConfig& cfg, Log& log)
{
  auto scene = raytracer::load_scene(read_file(cfg.scene_path));
  auto almanac = satgeo::parse_yuma(read_file(cfg.almanac_path));
  auto epochs = parse_epochs(cfg.epochs);

  const satgeo::GeodeticPosition origin{scene.origin_lat_deg, scene.origin_lon_deg, cfg.rx.height_m};
  satgeo::validate(origin);
  const auto basis = satgeo::enu_basis(origin);
  const Vec3 rx_enu{cfg.rx_east_m, cfg.rx_north_m, cfg.rx_agl_m};
  const Vec3 rx_ecef = satgeo::geodetic_to_ecef(origin) + rx_enu.x * basis.east + rx_enu.y * basis.north +
                       rx_enu.z * basis.up;
  const auto rx_geo = satgeo::ecef_to_geodetic(rx_ecef);

  raytracer::TraceReportFile file;
  file.receiver_enu = rx_enu;
  for (auto epoch : epochs) {
    for (const auto& entry : almanac) {
      auto state = satgeo::satellite_state(entry, epoch, rx_geo, cfg.leap_seconds);
      if (!(state.elevation_deg > cfg.min_elevation_deg)) {
        continue;
      }
      // Direction in the scene's own ENU frame, which is anchored at the origin.
      const Vec3 los = normalized(state.ecef - rx_ecef);
      const Vec3 dir = normalized(Vec3{dot(los, basis.east), dot(los, basis.north), dot(los, basis.up)});
      raytracer::TraceReport report;
      report.epoch = epoch;
      report.prn = entry.prn;
      report.elevation_deg = state.elevation_deg;
      report.azimuth_deg = state.azimuth_deg;
      report.paths = raytracer::trace_paths(scene, rx_enu, dir, cfg.max_order, entry.prn);
      report.label = raytracer::label_condition(report.paths, entry.prn);
      file.reports.push_back(std::move(report));
    }
  }
  std::sort(file.reports.begin(), file.reports.end(),
            [](const auto& a, const auto& b) { return std::tie(a.epoch, a.prn) < std::tie(b.epoch, b.prn); });
  write_atomic(cfg.out_path, raytracer::reports_to_json(file));
  std::size_t multipath = 0;
  for (const auto& r : file.reports) {
    multipath += raytracer::is_multipath(r.label.label) ? 1 : 0;
  }
  log.info("traced", "epochs=" + std::to_string(epochs.size()) + " reports=" +
                       std::to_string(file.reports.size()) + " multipath=" + std::to_string(multipath) +
                       " out=" + cfg.out_path);
}

inline void run_synth(const RunConfig& cfg, Log& log)
{
  auto reports = raytracer::reports_from_json(read_file(cfg.labels_path));
  eval::SynthesisModel model;
  model.seed = cfg.seed;
  model.noise_sigma_db = cfg.sigma_db;
  model.multipath_diff_penalty_db = cfg.penalty_db;
  auto records = eval::synthesize(eval::labels_from_reports(reports), model);
  write_atomic(cfg.out_path, obs::serialize_observations(records));
  log.info("synthesized", "records=" + std::to_string(records.size()) + " seed=" + std::to_string(cfg.seed) +
                            " out=" + cfg.out_path);
}

inline void run_evaluate(const RunConfig& cfg, Log& log, std::ostream& out)
{
  auto decisions = detector::decisions_from_csv(read_file(cfg.decisions_path));
  auto reports = raytracer::reports_from_json(read_file(cfg.labels_path));
  auto report = eval::score(decisions, eval::labels_from_reports(reports));
  if (!cfg.out_path.empty()) {
    write_atomic(cfg.out_path, eval::report_to_json(report));
  }
  out << eval::report_table(report);
  log.info("evaluated", "scored=" + std::to_string(report.confusion.total()) +
                          " out_of_range=" + std::to_string(report.out_of_range));
}

inline void add_rx(CLI::App* app, RunConfig& cfg, bool required)
{
  auto* lat = app->add_option("--rx-lat", cfg.rx.lat_deg, "Receiver latitude, degrees")
                ->check(CLI::Range(-90.0, 90.0));
  auto* lon = app->add_option("--rx-lon", cfg.rx.lon_deg, "Receiver longitude, degrees")
                ->check(CLI::Range(-180.0, 180.0));
  app->add_option("--rx-height", cfg.rx.height_m, "Receiver ellipsoidal height, m");
  if (required) {
    lat->required();
    lon->required();
  }
}

inline void add_leap(CLI::App* app, RunConfig& cfg)
{
  app->add_option("--leap-seconds", cfg.leap_seconds,
                  std::string("GPS - UTC offset in seconds (env ") + kLeapSecondsEnv + ", default 18)")
    ->check(CLI::Range(0, 100));
}

} // namespace detail

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr)
{
  RunConfig cfg;
  if (const char* env = std::getenv(kLeapSecondsEnv)) {
    auto v = mpdetect::detail::to_int(env);
    if (!v || *v < 0 || *v > 100) {
      err << "level=error msg=\"invalid " << kLeapSecondsEnv << "\"\n";
      return kExitUsage;
    }
    cfg.leap_seconds = static_cast<int>(*v);
  }

  CLI::App app{"GPS multipath detection from dual-polarized C/N0 measurements", "mpdetect"};
  app.require_subcommand(1);

  auto* merge = app.add_subcommand("merge", "Join single-channel RHCP/LHCP logs into an observation CSV");
  merge->add_option("--in", cfg.inputs, "Single-channel CSV (repeatable)")->required();
  merge->add_option("--out", cfg.out_path, "Merged observation CSV")->required();

  auto* calibrate = app.add_subcommand("calibrate", "Build the elevation-dependent threshold curve");
  calibrate->add_option("--obs", cfg.obs_path, "Observation CSV from a low-multipath site")->required();
  calibrate->add_option("--almanac", cfg.almanac_path, "YUMA almanac")->required();
  detail::add_rx(calibrate, cfg, true);
  calibrate->add_option("--bin-width", cfg.bin_width_deg, "Elevation bin width, degrees")
    ->check(CLI::PositiveNumber);
  calibrate->add_option("--min-el", cfg.min_elevation_deg, "Lowest elevation used, degrees (inclusive)");
  calibrate->add_option("--max-el", cfg.max_elevation_deg, "Highest elevation used, degrees (exclusive)");
  calibrate->add_option("--plot-out", cfg.plot_path, "Optional CSV of samples with threshold overlay");
  calibrate->add_option("--out", cfg.out_path, "Threshold curve JSON")->required();
  detail::add_leap(calibrate, cfg);

  auto* detect = app.add_subcommand("detect", "Classify observations against a threshold curve");
  detect->add_option("--obs", cfg.obs_path, "Observation CSV")->required();
  detect->add_option("--curve", cfg.curve_path, "Threshold curve JSON")->required();
  detect->add_option("--almanac", cfg.almanac_path, "YUMA almanac")->required();
  detail::add_rx(detect, cfg, true);
  detect->add_option("--ratio", cfg.ratio, "Per-satellite multipath share that flags a PRN")
    ->check(CLI::Range(0.0, 1.0));
  detect->add_flag("--include-out-of-range", cfg.include_out_of_range, "Also write OUT_OF_RANGE rows");
  detect->add_option("--summary", cfg.summary_path, "Optional per-satellite verdict JSON");
  detect->add_option("--out", cfg.out_path, "Decision CSV")->required();
  detail::add_leap(detect, cfg);

  auto* trace = app.add_subcommand("trace", "Ray-trace every visible satellite and label its condition");
  trace->add_option("--scene", cfg.scene_path, "Scene JSON")->required();
  trace->add_option("--almanac", cfg.almanac_path, "YUMA almanac")->required();
  trace->add_option("--epochs", cfg.epochs, "Unix epochs: start:end:step, a,b,c or t")->required();
  trace->add_option("--rx-east", cfg.rx_east_m, "Receiver east offset from scene origin, m");
  trace->add_option("--rx-north", cfg.rx_north_m, "Receiver north offset from scene origin, m");
  trace->add_option("--rx-agl", cfg.rx_agl_m, "Receiver height above ground, m")->check(CLI::NonNegativeNumber);
  trace->add_option("--rx-height", cfg.rx.height_m, "Ellipsoidal height of the scene ground, m");
  trace->add_option("--min-el", cfg.min_elevation_deg, "Trace satellites above this elevation, degrees");
  trace->add_option("--max-order", cfg.max_order, "Maximum reflection order")->check(CLI::Range(0, 2));
  trace->add_option("--out", cfg.out_path, "Path report JSON")->required();
  detail::add_leap(trace, cfg);

  auto* synth = app.add_subcommand("synth", "Synthesize observations from a path report");
  synth->add_option("--labels", cfg.labels_path, "Path report JSON from `trace`")->required();
  synth->add_option("--seed", cfg.seed, "Random seed");
  synth->add_option("--sigma", cfg.sigma_db, "Noise standard deviation, dB")->check(CLI::NonNegativeNumber);
  synth->add_option("--penalty", cfg.penalty_db, "Multipath C/N0-difference penalty, dB")
    ->check(CLI::PositiveNumber);
  synth->add_option("--out", cfg.out_path, "Observation CSV")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Score decisions against ray-traced labels");
  evaluate->add_option("--decisions", cfg.decisions_path, "Decision CSV from `detect`")->required();
  evaluate->add_option("--labels", cfg.labels_path, "Path report JSON from `trace`")->required();
  evaluate->add_option("--out", cfg.out_path, "Optional report JSON");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  auto* sub = app.get_subcommands().front();
  cfg.subcommand = sub->get_name();
  // trace keeps every satellite above the horizon unless told otherwise.
  if (cfg.subcommand == "trace" && sub->count("--min-el") == 0) {
    cfg.min_elevation_deg = 0.0;
  }
  detail::Log log(err, cfg.subcommand);

  try {
    std::vector<std::string> inputs;
    for (const auto* p : {&cfg.obs_path, &cfg.almanac_path, &cfg.curve_path, &cfg.scene_path, &cfg.labels_path,
                          &cfg.decisions_path}) {
      if (!p->empty()) {
        inputs.push_back(*p);
      }
    }
    inputs.insert(inputs.end(), cfg.inputs.begin(), cfg.inputs.end());
    detail::require_inputs(inputs);
    for (const auto* p : {&cfg.out_path, &cfg.plot_path, &cfg.summary_path}) {
      detail::require_output(*p);
    }
    satgeo::validate(cfg.rx);

    if (cfg.subcommand == "merge") detail::run_merge(cfg, log);
    else if (cfg.subcommand == "calibrate") detail::run_calibrate(cfg, log);
    else if (cfg.subcommand == "detect") detail::run_detect(cfg, log);
    else if (cfg.subcommand == "trace") detail::run_trace(cfg, log);
    else if (cfg.subcommand == "synth") detail::run_synth(cfg, log);
    else if (cfg.subcommand == "evaluate") detail::run_evaluate(cfg, log, out);
  } catch (const std::exception& e) {
    log.error(e.what());
    return kExitData;
  }
  return kExitOk;
}

} // namespace mpdetect::cli
