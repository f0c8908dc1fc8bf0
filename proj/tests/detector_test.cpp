#include <cmath>
#include <map>
#include <random>

#include <gtest/gtest.h>

#include "mpdetect/detector.hpp"
#include "oracles/geometry_oracles.hpp"

namespace
{

using namespace mpdetect;
using detector::ThresholdBin;
using detector::ThresholdCurve;
using detector::Verdict;
using obs::ObservationRecord;

ObservationRecord rec(double el, double diff, int prn = 1, std::int64_t epoch = 0)
{
  return {epoch, prn, 45.0, 45.0 - diff, el};
}

ThresholdCurve two_bin_curve()
{
  return {1.0, {{20.5, 10.0, 4}, {21.5, 12.0, 4}}, 20.5, 21.5};
}

TEST(Calibrate, ThreeRecordsOneBin)
{
  auto curve = detector::calibrate({rec(20.2, 10), rec(20.6, 12), rec(20.9, 14)}, 1.0);
  ASSERT_EQ(curve.bins.size(), 1u);
  EXPECT_EQ(curve.bins[0], (ThresholdBin{20.5, 12.0, 3}));
  EXPECT_EQ(curve.valid_min_deg, 20.5);
  EXPECT_EQ(curve.valid_max_deg, 20.5);
}

TEST(Calibrate, ConstantDifference)
{
  std::vector<ObservationRecord> recs;
  for (int i = 0; i < 200; ++i) {
    recs.push_back(rec(10.0 + 0.13 * i, 7.0, 1, i));
  }
  auto curve = detector::calibrate(recs, 1.0);
  for (const auto& b : curve.bins) {
    EXPECT_EQ(b.mean_db, 7.0);
  }
  EXPECT_NO_THROW(detector::validate(curve));
}

TEST(Calibrate, EmptyBinsOmittedAndBridged)
{
  auto curve = detector::calibrate({rec(10.2, 4), rec(14.7, 8)}, 1.0);
  ASSERT_EQ(curve.bins.size(), 2u);
  EXPECT_EQ(curve.bins[0].center_deg, 10.5);
  EXPECT_EQ(curve.bins[1].center_deg, 14.5);
  EXPECT_DOUBLE_EQ(detector::threshold_at(curve, 12.5).threshold_db, 6.0);
}

TEST(Calibrate, Errors)
{
  EXPECT_THROW(detector::calibrate({}, 1.0), EmptyCalibrationError);
  EXPECT_THROW(detector::calibrate({rec(10, 1)}, 0.0), std::invalid_argument);
  ObservationRecord no_el{0, 1, 40.0, 30.0, std::nullopt};
  EXPECT_THROW(detector::calibrate({no_el}, 1.0), std::invalid_argument);
}

TEST(Calibrate, MatchesStreamingMeanOracle)
{
  std::mt19937 rng(99);
  std::uniform_real_distribution<double> el(10.0, 35.0);
  std::uniform_int_distribution<int> diff(-5, 25);
  std::vector<ObservationRecord> recs;
  std::map<std::int64_t, oracle::StreamingMean> expect;
  for (int i = 0; i < 5000; ++i) {
    const double e = el(rng);
    const double d = diff(rng);
    recs.push_back(rec(e, d, 1, i));
    expect[static_cast<std::int64_t>(std::floor(e / 0.5))].add(d);
  }
  auto curve = detector::calibrate(recs, 0.5);
  ASSERT_EQ(curve.bins.size(), expect.size());
  std::size_t i = 0;
  for (const auto& [k, m] : expect) {
    EXPECT_EQ(curve.bins[i].center_deg, (k + 0.5) * 0.5);
    EXPECT_EQ(curve.bins[i].count, m.count());
    EXPECT_NEAR(curve.bins[i].mean_db, m.mean(), 1e-12);
    ++i;
  }
}

// diff = 0.3 el + N(0, 1): each bin mean within 3 sigma / sqrt(count) of 0.3 center.
TEST(Calibrate, StatisticalLinearTruth)
{
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> el(5.0, 45.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<ObservationRecord> recs;
  for (int i = 0; i < 1000; ++i) {
    const double e = el(rng);
    ObservationRecord r{i, 1, 50.0, 50.0 - (0.3 * e + noise(rng)), e};
    recs.push_back(r);
  }
  auto curve = detector::calibrate(recs, 1.0);
  // The mean of 0.3 el over a bin is 0.3 center up to the uneven spread of
  // elevations inside the bin, at most 0.15 dB.
  for (const auto& b : curve.bins) {
    EXPECT_NEAR(b.mean_db, 0.3 * b.center_deg, 3.0 / std::sqrt(double(b.count)) + 0.15)
      << "bin " << b.center_deg;
  }
}

TEST(ThresholdAt, BinCentersReturnMeansExactly)
{
  ThresholdCurve c{1.0, {{10.5, 3.25, 1}, {11.5, 7.125, 2}, {14.5, -1.0, 3}, {20.5, 9.9, 1}}, 10.5, 20.5};
  for (const auto& b : c.bins) {
    auto t = detector::threshold_at(c, b.center_deg);
    EXPECT_EQ(t.threshold_db, b.mean_db);
    EXPECT_TRUE(t.in_range);
  }
}

TEST(ThresholdAt, MidpointAndClamp)
{
  auto c = two_bin_curve();
  EXPECT_EQ(detector::threshold_at(c, 21.0).threshold_db, 11.0);
  auto below = detector::threshold_at(c, 5.0);
  EXPECT_EQ(below.threshold_db, 10.0);
  EXPECT_FALSE(below.in_range);
  auto above = detector::threshold_at(c, 80.0);
  EXPECT_EQ(above.threshold_db, 12.0);
  EXPECT_FALSE(above.in_range);
  EXPECT_THROW(detector::threshold_at(ThresholdCurve{}, 20.0), InvalidCurveError);
}

TEST(ThresholdAt, ContinuousAndBounded)
{
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> mean(-10.0, 30.0);
  ThresholdCurve c;
  for (int k = 10; k < 35; ++k) {
    c.bins.push_back({k + 0.5, mean(rng), 1});
  }
  c.valid_min_deg = c.bins.front().center_deg;
  c.valid_max_deg = c.bins.back().center_deg;
  double lo = 1e9;
  double hi = -1e9;
  for (const auto& b : c.bins) {
    lo = std::min(lo, b.mean_db);
    hi = std::max(hi, b.mean_db);
  }
  double prev = detector::threshold_at(c, c.valid_min_deg).threshold_db;
  const double step = 1e-4;
  for (double el = c.valid_min_deg + step; el <= c.valid_max_deg; el += step) {
    const double t = detector::threshold_at(c, el).threshold_db;
    EXPECT_GE(t, lo);
    EXPECT_LE(t, hi);
    // Slope is at most 40 dB per degree here.
    EXPECT_LE(std::abs(t - prev), 40.0 * step + 1e-9);
    prev = t;
  }
}

TEST(Classify, StrictInequalityTriple)
{
  ThresholdCurve c{1.0, {{20.5, 12.0, 1}}, 20.5, 20.5};
  EXPECT_EQ(detector::classify(rec(20.5, 5), c).verdict, Verdict::multipath);
  EXPECT_EQ(detector::classify(rec(20.5, 12), c).verdict, Verdict::clean);
  EXPECT_EQ(detector::classify(rec(20.5, 14), c).verdict, Verdict::clean);
  auto d = detector::classify(rec(40.0, 1), c);
  EXPECT_EQ(d.verdict, Verdict::out_of_range);
  EXPECT_EQ(d.threshold_db, 12.0);
  EXPECT_EQ(d.diff_db, 1.0);
}

TEST(Classify, Monotonicity)
{
  std::mt19937 rng(31);
  std::uniform_real_distribution<double> el(10.5, 34.5);
  std::uniform_int_distribution<int> diff(-10, 40);
  std::uniform_real_distribution<double> mean(0.0, 20.0);
  ThresholdCurve c;
  for (int k = 10; k < 35; ++k) {
    c.bins.push_back({k + 0.5, mean(rng), 1});
  }
  c.valid_min_deg = 10.5;
  c.valid_max_deg = 34.5;
  for (int i = 0; i < 10000; ++i) {
    const double e = el(rng);
    double d1 = diff(rng);
    double d2 = diff(rng);
    if (d1 > d2) std::swap(d1, d2);
    const auto v1 = detector::classify(rec(e, d1), c).verdict;
    const auto v2 = detector::classify(rec(e, d2), c).verdict;
    if (v2 == Verdict::multipath) {
      ASSERT_EQ(v1, Verdict::multipath) << e << " " << d1 << " " << d2;
    }
  }
}

TEST(Classify, ConstantShiftInvariance)
{
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> el(10.0, 35.0);
  std::uniform_int_distribution<int> diff(0, 20);
  std::vector<ObservationRecord> base;
  for (int i = 0; i < 500; ++i) {
    base.push_back(rec(el(rng), diff(rng), 1, i));
  }
  for (double shift : {3.0, -4.0, 0.5}) {
    std::vector<ObservationRecord> moved;
    for (auto r : base) {
      r.cn0_lhcp = *r.cn0_lhcp - shift;
      moved.push_back(r);
    }
    auto c0 = detector::calibrate(base, 1.0);
    auto c1 = detector::calibrate(moved, 1.0);
    for (double e = c0.valid_min_deg; e <= c0.valid_max_deg; e += 0.01) {
      ASSERT_NEAR(detector::threshold_at(c1, e).threshold_db,
                  detector::threshold_at(c0, e).threshold_db + shift, 1e-9);
    }
    // Records whose diff sits exactly on a threshold can flip by one ulp of
    // rounding, so compare verdicts away from ties.
    for (std::size_t i = 0; i < base.size(); ++i) {
      const auto a = detector::classify(base[i], c0);
      if (std::abs(a.diff_db - a.threshold_db) < 1e-9) continue;
      EXPECT_EQ(detector::classify(moved[i], c1).verdict, a.verdict);
    }
  }
}

detector::Decision dec(int prn, std::int64_t epoch, Verdict v)
{
  return {epoch, prn, 20.0, 0.0, 0.0, v};
}

TEST(Aggregate, RatioBoundaryAndOmission)
{
  std::vector<detector::Decision> ds;
  for (int i = 0; i < 10; ++i) {
    ds.push_back(dec(3, 100 + i, i < 9 ? Verdict::multipath : Verdict::clean));
    ds.push_back(dec(7, 100 + i, i < 5 ? Verdict::multipath : Verdict::clean));
    ds.push_back(dec(9, 100 + i, Verdict::out_of_range));
  }
  ds.push_back(dec(7, 50, Verdict::out_of_range));
  auto r = detector::aggregate(ds, 0.5);
  ASSERT_EQ(r.verdicts.size(), 2u);
  EXPECT_EQ(r.verdicts[0].prn, 3);
  EXPECT_TRUE(r.verdicts[0].flagged);
  EXPECT_DOUBLE_EQ(r.verdicts[0].fraction_multipath, 0.9);
  EXPECT_EQ(r.verdicts[1].prn, 7);
  EXPECT_FALSE(r.verdicts[1].flagged);
  EXPECT_EQ(r.verdicts[1].start_epoch, 100);
  EXPECT_EQ(r.verdicts[1].end_epoch, 109);
  EXPECT_EQ(r.verdicts[1].n_multipath + r.verdicts[1].n_clean, 10u);
  EXPECT_EQ(r.omitted_prns, std::vector<int>{9});
  EXPECT_THROW(detector::aggregate(ds, 0.0), std::invalid_argument);
  EXPECT_THROW(detector::aggregate(ds, 1.5), std::invalid_argument);
}

TEST(CurveJson, RoundTripIsByteIdentical)
{
  auto curve = detector::calibrate({rec(10.2, 4), rec(10.9, 5), rec(14.7, 8), rec(33.3, 13)}, 1.0);
  const auto text = detector::curve_to_json(curve);
  auto back = detector::curve_from_json(text);
  EXPECT_EQ(back, curve);
  EXPECT_EQ(detector::curve_to_json(back), text);
}

TEST(CurveJson, RejectsInvalid)
{
  EXPECT_THROW(detector::curve_from_json("{"), ParseError);
  EXPECT_THROW(detector::curve_from_json(R"({"bin_width_deg":1,"bins":[],"valid_range":[0,0]})"),
               InvalidCurveError);
  EXPECT_THROW(detector::curve_from_json(
                 R"({"bin_width_deg":1,"bins":[{"center_deg":2.5,"mean_db":1,"count":1},)"
                 R"({"center_deg":1.5,"mean_db":1,"count":1}],"valid_range":[2.5,1.5]})"),
               InvalidCurveError);
}

TEST(DecisionsCsv, RoundTrip)
{
  std::vector<detector::Decision> ds{{1700000000, 4, 21.25, 12, 11.5, Verdict::clean},
                                     {1700000001, 12, 15.1, 3, 9.75, Verdict::multipath},
                                     {1700000002, 30, 60.0, 13, 14, Verdict::out_of_range}};
  const auto text = detector::decisions_to_csv(ds);
  EXPECT_EQ(detector::decisions_from_csv(text), ds);
  EXPECT_EQ(detector::decisions_to_csv(detector::decisions_from_csv(text)), text);
  EXPECT_THROW(detector::decisions_from_csv("epoch,prn\n"), FormatError);
  EXPECT_THROW(detector::decisions_from_csv(std::string(detector::kDecisionHeader) + "\n1,2,3,4,5,MAYBE\n"),
               ParseError);
}

} // namespace
