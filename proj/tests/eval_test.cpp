#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "mpdetect/eval.hpp"
#include "pipeline_fixture.hpp"

namespace
{

using namespace mpdetect;
using eval::LabeledEpoch;
using raytracer::Condition;

eval::SynthesisModel flat_model(double diff, double sigma)
{
  eval::SynthesisModel m;
  m.clean_diff_db = eval::PiecewiseLinear({{0.0, diff}, {90.0, diff}});
  m.noise_sigma_db = sigma;
  m.multipath_diff_penalty_db = 8.0;
  return m;
}

TEST(PiecewiseLinear, InterpolatesAndClamps)
{
  eval::PiecewiseLinear f({{10.0, 6.0}, {35.0, 14.0}});
  EXPECT_EQ(f(0.0), 6.0);
  EXPECT_EQ(f(10.0), 6.0);
  EXPECT_DOUBLE_EQ(f(22.5), 10.0);
  EXPECT_EQ(f(35.0), 14.0);
  EXPECT_EQ(f(80.0), 14.0);
  EXPECT_THROW(eval::PiecewiseLinear(std::vector<std::pair<double, double>>{}), std::invalid_argument);
  EXPECT_THROW(eval::PiecewiseLinear({{1.0, 0.0}, {1.0, 2.0}}), std::invalid_argument);
}

TEST(Synthesize, NoiselessArithmetic)
{
  const auto model = flat_model(12.0, 0.0);
  std::vector<LabeledEpoch> labels{{100, 3, 5.0, Condition::los_only},
                                   {100, 4, 47.0, Condition::nlos_only},
                                   {100, 5, 80.0, Condition::los_plus_nlos},
                                   {100, 6, 30.0, Condition::blocked}};
  auto recs = eval::synthesize(labels, model);
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(obs::cn0_difference(recs[0]).value, 12.0);
  EXPECT_EQ(obs::cn0_difference(recs[1]).value, 4.0);
  EXPECT_EQ(obs::cn0_difference(recs[2]).value, 4.0);
  EXPECT_EQ(*recs[1].elevation_deg, 47.0);
}

TEST(Synthesize, DeterministicAndOrderIndependent)
{
  auto labels = testutil::random_labels(500, 3);
  eval::SynthesisModel m;
  m.seed = 77;
  const auto a = eval::synthesize(labels, m);
  std::shuffle(labels.begin(), labels.end(), std::mt19937(1));
  EXPECT_EQ(eval::synthesize(labels, m), a);
  m.seed = 78;
  EXPECT_NE(eval::synthesize(labels, m), a);
}

TEST(Synthesize, OutputsAreQuantizedAndInRange)
{
  auto labels = testutil::random_labels(2000, 9);
  eval::SynthesisModel m;
  m.noise_sigma_db = 6.0;
  for (const auto& r : eval::synthesize(labels, m)) {
    ASSERT_EQ(*r.cn0_rhcp, std::round(*r.cn0_rhcp));
    ASSERT_EQ(*r.cn0_lhcp, std::round(*r.cn0_lhcp));
    ASSERT_GE(*r.cn0_lhcp, 0.0);
    ASSERT_LE(*r.cn0_rhcp, 60.0);
  }
}

// Sample mean of 1e4 LOS draws at 20 deg within 3 sigma / sqrt(n) of the
// model value; quantization adds at most a uniform +-0.5 dB term whose mean
// is zero, so it only widens the spread.
TEST(Synthesize, StatisticalMeanMatchesModel)
{
  eval::SynthesisModel m;
  m.noise_sigma_db = 1.0;
  std::vector<LabeledEpoch> labels;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    labels.push_back({i, 1 + i % 32, 20.0, Condition::los_only});
  }
  double sum = 0.0;
  for (const auto& r : eval::synthesize(labels, m)) {
    sum += obs::cn0_difference(r).value;
  }
  const double sigma = std::sqrt(1.0 + 1.0 / 12.0);
  EXPECT_NEAR(sum / n, m.clean_diff_db(20.0), 3.0 * sigma / std::sqrt(double(n)));
}

TEST(Synthesize, ModelValidation)
{
  eval::SynthesisModel m;
  m.multipath_diff_penalty_db = 0.0;
  EXPECT_THROW(eval::synthesize({}, m), ValidationError);
  m = {};
  m.noise_sigma_db = -1.0;
  EXPECT_THROW(eval::synthesize({}, m), ValidationError);
  m = {};
  m.clean_diff_db = eval::PiecewiseLinear({{5.0, 1.0}, {90.0, 1.0}});
  EXPECT_THROW(eval::synthesize({}, m), ValidationError);
}

detector::Decision dec(std::int64_t epoch, int prn, detector::Verdict v)
{
  return {epoch, prn, 20.0, 0.0, 0.0, v};
}

TEST(Score, AllMultipathGivesUndefinedFalseAlarm)
{
  std::vector<LabeledEpoch> labels;
  std::vector<detector::Decision> ds;
  for (int i = 0; i < 10; ++i) {
    labels.push_back({i, 2, 20.0, i % 2 ? Condition::nlos_only : Condition::los_plus_nlos});
    ds.push_back(dec(i, 2, detector::Verdict::multipath));
  }
  auto r = eval::score(ds, labels);
  EXPECT_EQ(*r.detection_rate(), 1.0);
  EXPECT_FALSE(r.false_alarm_rate().has_value());
  const auto json = eval::report_to_json(r);
  EXPECT_NE(json.find("\"false_alarm_rate\": null"), std::string::npos);
  EXPECT_NE(eval::report_table(r).find("undefined"), std::string::npos);
}

TEST(Score, BookkeepingAndPermutationInvariance)
{
  std::mt19937 rng(6);
  std::uniform_int_distribution<int> v(0, 2);
  auto labels = testutil::random_labels(3000, 21);
  labels.push_back({1, 1, 20.0, Condition::blocked});
  std::vector<detector::Decision> ds;
  for (const auto& l : labels) {
    ds.push_back(dec(l.epoch, l.prn, static_cast<detector::Verdict>(v(rng))));
  }
  auto r = eval::score(ds, labels);
  EXPECT_EQ(r.confusion.total() + r.out_of_range, ds.size());
  std::size_t per = 0;
  for (const auto& [prn, c] : r.per_prn) per += c.total();
  EXPECT_EQ(per, r.confusion.total());
  std::shuffle(ds.begin(), ds.end(), rng);
  std::shuffle(labels.begin(), labels.end(), rng);
  auto r2 = eval::score(ds, labels);
  EXPECT_EQ(eval::report_to_json(r2), eval::report_to_json(r));
}

TEST(Score, JoinAndDuplicateErrors)
{
  std::vector<LabeledEpoch> labels{{1, 1, 20.0, Condition::los_only}};
  EXPECT_THROW(eval::score({dec(2, 1, detector::Verdict::clean)}, labels), JoinError);
  labels.push_back(labels.front());
  EXPECT_THROW(eval::score({}, labels), DuplicateError);
  std::vector<detector::Decision> many;
  for (int i = 0; i < 25; ++i) many.push_back(dec(100 + i, 3, detector::Verdict::clean));
  try {
    eval::score(many, {});
    FAIL();
  } catch (const JoinError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("25 decision"), std::string::npos);
    EXPECT_NE(msg.find("(109, 3)"), std::string::npos);
    EXPECT_EQ(msg.find("(110, 3)"), std::string::npos);
  }
}

TEST(Pipeline, NoiselessRunHasNoErrors)
{
  eval::SynthesisModel m;
  m.noise_sigma_db = 0.0;
  const auto res = testutil::run_pipeline(testutil::bin_center_labels(40), m);
  const auto& c = res.report.confusion;
  EXPECT_EQ(res.report.out_of_range, 0u);
  EXPECT_EQ(c.false_positive + c.false_negative, 0u);
  EXPECT_EQ(*res.report.detection_rate(), 1.0);
  EXPECT_EQ(*res.report.false_alarm_rate(), 0.0);
}

TEST(Pipeline, NoiselessFlatModelWithRandomElevations)
{
  const auto res = testutil::run_pipeline(testutil::random_labels(4000, 5), flat_model(12.0, 0.0));
  EXPECT_EQ(*res.report.detection_rate(), 1.0);
  EXPECT_EQ(*res.report.false_alarm_rate(), 0.0);
}

} // namespace
