#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "mcdu/calibration.hpp"
#include "mcdu/synth.hpp"

namespace mcdu {
namespace {

// Naive softmax in long double, no max shift; only for moderate logits.
std::vector<double> plain_softmax(const std::vector<double>& z, double t) {
  long double total = 0.0L;
  for (double v : z) total += std::exp(static_cast<long double>(v) / t);
  std::vector<double> p;
  for (double v : z) p.push_back(static_cast<double>(std::exp(static_cast<long double>(v) / t) / total));
  return p;
}

double grid_oracle_min_t(const std::vector<CalibrationRecord>& records, double lo, double hi, double step) {
  double best_t = lo, best = std::numeric_limits<double>::infinity();
  const int steps = static_cast<int>(std::lround((hi - lo) / step));
  for (int i = 0; i <= steps; ++i) {
    const double t = lo + step * i;
    const double v = negative_log_likelihood(records, t);
    if (v < best) {
      best = v;
      best_t = t;
    }
  }
  return best_t;
}

CalibrationRecord record(std::vector<double> z, int y) { return {LogitVector(std::move(z)), y}; }

TEST(Softmax, Examples) {
  const auto u = softmax(LogitVector({0, 0, 0}));
  for (double p : u.values()) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
  for (double c : {-30.0, 0.0, 7.5, 400.0}) {
    const auto p = softmax(LogitVector({c, c + std::numbers::ln2}));
    EXPECT_NEAR(p[0], 1.0 / 3.0, 1e-12);
    EXPECT_NEAR(p[1], 2.0 / 3.0, 1e-12);
  }
  const auto big = softmax(LogitVector({1000, 0}));
  EXPECT_DOUBLE_EQ(big[0], 1.0);
  EXPECT_GE(big[1], 0.0);
  EXPECT_LT(big[1], 1e-300);
}

TEST(Softmax, SumsToOneAndMatchesNaive) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> z(0.0, 5.0);
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> v(2 + t % 7);
    for (double& x : v) x = z(rng);
    const auto p = softmax(LogitVector(v));
    double sum = 0.0;
    for (double x : p.values()) sum += x;
    EXPECT_NEAR(sum, 1.0, 1e-12);
    const auto q = plain_softmax(v, 1.0);
    for (std::size_t j = 0; j < v.size(); ++j) EXPECT_NEAR(p[j], q[j], 1e-14);
  }
}

TEST(ScaledSoftmax, Examples) {
  const LogitVector z({0.3, -1.2, 2.5, 0.0});
  EXPECT_EQ(scaled_softmax(z, 1.0), softmax(z));
  const auto flat = scaled_softmax(z, 1e6);
  for (double p : flat.values()) EXPECT_LT(std::abs(p - 0.25), 1e-5);
  EXPECT_THROW(scaled_softmax(z, 0.0), std::invalid_argument);
  EXPECT_THROW(scaled_softmax(z, -2.0), std::invalid_argument);
  const auto sharp = scaled_softmax(z, 0.5);
  const auto q = plain_softmax(z.values(), 0.5);
  for (std::size_t j = 0; j < q.size(); ++j) EXPECT_NEAR(sharp[j], q[j], 1e-14);
}

TEST(ScaledSoftmax, PreservesArgmax) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> z(0.0, 4.0);
  std::uniform_real_distribution<double> log_t(-4.0, 4.0);
  for (int t = 0; t < 5000; ++t) {
    std::vector<double> v(6);
    for (double& x : v) x = z(rng);
    const LogitVector lv(v);
    EXPECT_EQ(scaled_softmax(lv, std::exp(log_t(rng))).argmax(), lv.argmax());
  }
}

TEST(FitTemperature, RecoversScaledCalibratedLogits) {
  const auto records = generate_calibration_records(10000, 2.0, 5, 3);
  const double t = fit_temperature(records);
  EXPECT_NEAR(t, 2.0, 0.04);
  // Oracle grid over the full interval in steps of 0.01.
  const double grid_t = grid_oracle_min_t(records, 0.01, 100.0, 0.01);
  EXPECT_LE(negative_log_likelihood(records, t), negative_log_likelihood(records, grid_t) * (1 + 1e-6));
}

TEST(FitTemperature, CalibratedRecordsStayNearOne) {
  const auto records = generate_calibration_records(10000, 1.0, 5, 4);
  const double t = fit_temperature(records);
  EXPECT_GE(t, 0.9);
  EXPECT_LE(t, 1.1);
  EXPECT_LE(negative_log_likelihood(records, t), negative_log_likelihood(records, 1.0));
}

TEST(FitTemperature, SingleConfidentCorrectRecordGoesToTheSharpEnd) {
  const std::vector<CalibrationRecord> records(5, record({0.0, 3.0, -1.0}, 1));
  const double t = fit_temperature(records);
  // NLL falls monotonically as T shrinks; the oracle agrees.
  const double oracle = grid_oracle_min_t(records, 0.01, 100.0, 0.01);
  EXPECT_DOUBLE_EQ(oracle, 0.01);
  EXPECT_NEAR(t, 0.01, 1e-4);
  // A confidently wrong record pushes the other way.
  const std::vector<CalibrationRecord> wrong(5, record({0.0, 3.0, -1.0}, 0));
  EXPECT_NEAR(fit_temperature(wrong), 100.0, 1e-4);
}

TEST(FitTemperature, ScalingLogitsScalesTemperature) {
  const auto base = generate_calibration_records(4000, 1.5, 3, 12);
  const double t0 = fit_temperature(base);
  for (double c : {0.5, 2.0, 3.0}) {
    std::vector<CalibrationRecord> scaled;
    for (const auto& r : base) {
      auto v = r.logits.values();
      for (double& x : v) x *= c;
      scaled.push_back(record(v, r.true_class));
    }
    EXPECT_NEAR(fit_temperature(scaled), c * t0, 2e-3 * c * t0);
  }
}

TEST(FitTemperature, EmptyInput) { EXPECT_THROW(fit_temperature(std::vector<CalibrationRecord>{}), DataError); }

TEST(Reliability, PerfectConfidence) {
  const std::vector<CalibrationRecord> records(20, record({0.0, 800.0}, 1));
  const auto d = reliability(records, 1.0, 10);
  EXPECT_EQ(d.bins.back().count, 20u);
  EXPECT_DOUBLE_EQ(d.bins.back().accuracy, 1.0);
  EXPECT_DOUBLE_EQ(d.bins.back().gap(), 0.0);
  EXPECT_DOUBLE_EQ(mce(d), 0.0);
  EXPECT_DOUBLE_EQ(ace(d), 0.0);
}

TEST(Reliability, MatchesDirectCounting) {
  const auto records = generate_calibration_records(1000, 1.7, 4, 22);
  for (double t : {0.6, 1.0, 1.7}) {
    const auto d = reliability(records, t, 10);
    std::vector<std::size_t> count(10, 0), correct(10, 0);
    std::vector<double> conf(10, 0.0);
    for (const auto& r : records) {
      const auto p = plain_softmax(r.logits.values(), t);
      std::size_t arg = 0;
      for (std::size_t j = 1; j < p.size(); ++j) arg = p[j] > p[arg] ? j : arg;
      const std::size_t b = std::min<std::size_t>(9, static_cast<std::size_t>(std::floor(p[arg] * 10)));
      ++count[b];
      conf[b] += p[arg];
      correct[b] += static_cast<int>(arg) == r.true_class;
    }
    EXPECT_EQ(d.total(), records.size());
    for (std::size_t b = 0; b < 10; ++b) {
      EXPECT_DOUBLE_EQ(d.bins[b].lo, b / 10.0);
      EXPECT_EQ(d.bins[b].count, count[b]);
      if (count[b] == 0) continue;
      EXPECT_NEAR(d.bins[b].confidence, conf[b] / count[b], 1e-12);
      EXPECT_DOUBLE_EQ(d.bins[b].accuracy, static_cast<double>(correct[b]) / count[b]);
    }
    EXPECT_GE(mce(d), ace(d));
  }
}

TEST(Reliability, KnownBinAccuracyWithinBinomialNoise) {
  // Two-class records with confidence fixed mid-bin and a chosen hit rate.
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::vector<double> confidence{0.55, 0.65, 0.75, 0.85, 0.95};
  const std::vector<double> hit{0.3, 0.9, 0.5, 0.7, 0.95};
  std::vector<CalibrationRecord> records;
  for (std::size_t b = 0; b < confidence.size(); ++b) {
    const double z = std::log(confidence[b] / (1.0 - confidence[b]));
    for (int i = 0; i < 200; ++i) records.push_back(record({0.0, z}, u(rng) < hit[b] ? 1 : 0));
  }
  const auto d = reliability(records, 1.0, 10);
  for (std::size_t b = 0; b < confidence.size(); ++b) {
    const auto& bin = d.bins[5 + b];
    ASSERT_EQ(bin.count, 200u);
    EXPECT_NEAR(bin.confidence, confidence[b], 1e-12);
    const double sd = std::sqrt(hit[b] * (1 - hit[b]) / 200.0);
    EXPECT_NEAR(bin.accuracy, hit[b], 4 * sd + 1e-9);
  }
}

TEST(CalibrationError, SingleBinExample) {
  ReliabilityDiagram d;
  d.bins.resize(10);
  for (int i = 0; i < 10; ++i) {
    d.bins[i].lo = i / 10.0;
    d.bins[i].hi = (i + 1) / 10.0;
  }
  d.bins[9].count = 10;
  d.bins[9].confidence = 0.9;
  d.bins[9].accuracy = 0.7;
  EXPECT_NEAR(mce(d), 0.2, 1e-15);
  EXPECT_NEAR(ace(d), 0.2, 1e-15);
  // Empty bins do not dilute the average.
  d.bins[3].count = 4;
  d.bins[3].confidence = 0.35;
  d.bins[3].accuracy = 0.35;
  EXPECT_NEAR(ace(d), 0.1, 1e-15);
  EXPECT_NEAR(mce(d), 0.2, 1e-15);
  ReliabilityDiagram empty;
  empty.bins.resize(10);
  EXPECT_THROW(mce(empty), DataError);
  EXPECT_THROW(ace(empty), DataError);
}

TEST(FocalLoss, Examples) {
  const ScoreVector half({0.5, 0.5});
  EXPECT_NEAR(focal_loss(half, 1, {}, 2.0), 0.25 * std::numbers::ln2, 1e-15);
  EXPECT_DOUBLE_EQ(focal_loss(ScoreVector({0.0, 1.0}), 1, {}, 2.0), 0.0);
  const ScoreVector p({0.2, 0.7, 0.1});
  EXPECT_NEAR(focal_loss(p, 1, {}, 0.0), -std::log(0.7), 1e-15);
  const std::vector<double> alpha{1.0, 0.25, 2.0};
  EXPECT_NEAR(focal_loss(p, 2, alpha, 1.0), -2.0 * 0.9 * std::log(0.1), 1e-14);
  EXPECT_THROW(focal_loss(ScoreVector({1.0, 0.0}), 1), DataError);
  EXPECT_THROW(focal_loss(p, 3), std::out_of_range);
  EXPECT_THROW(focal_loss(p, 1, {}, -1.0), std::invalid_argument);
}

TEST(FocalLoss, NeverExceedsCrossEntropy) {
  std::mt19937_64 rng(15);
  std::gamma_distribution<double> g(1.0, 1.0);
  std::uniform_real_distribution<double> gamma(0.0, 6.0);
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> v(4);
    double total = 0.0;
    for (double& x : v) total += (x = g(rng) + 1e-9);
    for (double& x : v) x /= total;
    const ScoreVector p(v);
    const int y = t % 4;
    EXPECT_LE(focal_loss(p, y, {}, gamma(rng)), -std::log(p[y]) + 1e-15);
  }
}

TEST(CalibrationRecords, FileRoundTripAndErrors) {
  const auto records = generate_calibration_records(50, 1.3, 3, 1);
  std::ostringstream out;
  write_calibration_records(out, records);
  std::istringstream in(out.str());
  const auto back = parse_calibration_records(in);
  ASSERT_EQ(back.size(), records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].logits, records[i].logits);
    EXPECT_EQ(back[i].true_class, records[i].true_class);
  }
  std::istringstream bad("{\"logits\":[0,1],\"true_class\":0}\n{\"logits\":[0,1],\"true_class\":2}\n");
  try {
    parse_calibration_records(bad);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

}  // namespace
}  // namespace mcdu
