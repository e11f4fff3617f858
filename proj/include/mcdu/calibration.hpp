#pragma once

// Softmax, temperature scaling, reliability diagrams and calibration errors,
// and focal loss evaluation.

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "mcdu/core.hpp"
#include "mcdu/error.hpp"
#include "mcdu/jsonl.hpp"

namespace mcdu {

struct CalibrationRecord {
  LogitVector logits;
  int true_class = 0;
};

struct ReliabilityBin {
  double lo = 0.0;
  double hi = 0.0;
  double confidence = 0.0;  // mean confidence of the records in the bin
  double accuracy = 0.0;
  std::size_t count = 0;

  double gap() const { return std::abs(accuracy - confidence); }
};

struct ReliabilityDiagram {
  std::vector<ReliabilityBin> bins;

  std::size_t num_bins() const { return bins.size(); }
  std::size_t total() const {
    std::size_t t = 0;
    for (const auto& b : bins) t += b.count;
    return t;
  }
};

namespace detail {

inline double log_sum_exp(std::span<const double> v, double scale) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x * scale);
  double s = 0.0;
  for (double x : v) s += std::exp(x * scale - mx);
  return mx + std::log(s);
}

}  // namespace detail

/// Max-subtracted softmax.
inline std::vector<double> softmax_values(std::span<const double> z, double inv_temperature = 1.0) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : z) mx = std::max(mx, x * inv_temperature);
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] * inv_temperature - mx);
    s += p[i];
  }
  for (double& x : p) x /= s;
  return p;
}

inline ScoreVector softmax(const LogitVector& z) { return ScoreVector(softmax_values(z.values())); }

inline ScoreVector scaled_softmax(const LogitVector& z, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("temperature must be a positive finite number");
  }
  return ScoreVector(softmax_values(z.values(), 1.0 / temperature));
}

/// Summed negative log-likelihood of the true classes under softmax(z / T).
inline double negative_log_likelihood(std::span<const CalibrationRecord> records, double temperature) {
  const double inv = 1.0 / temperature;
  double total = 0.0;
  for (const auto& r : records) {
    const auto& z = r.logits.values();
    total += detail::log_sum_exp(z, inv) - z[static_cast<std::size_t>(r.true_class)] * inv;
  }
  return total;
}

struct TemperatureSearch {
  double lo = 0.01;
  double hi = 100.0;
  double tolerance = 1e-4;
};

/// Golden-section minimization of the NLL over T in [lo, hi]. The identity
/// temperature is also scored so the fit never does worse than T = 1.
inline double fit_temperature(std::span<const CalibrationRecord> records, const TemperatureSearch& search = {}) {
  if (records.empty()) throw DataError("fit_temperature: no records");
  auto f = [&](double t) { return negative_log_likelihood(records, t); };
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = search.lo, b = search.hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > search.tolerance) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  double best_t = c, best_f = fc;
  for (double t : {d, a, b, 0.5 * (a + b), 1.0}) {
    if (t < search.lo || t > search.hi) continue;
    const double v = (t == d) ? fd : f(t);
    if (v < best_f) {
      best_f = v;
      best_t = t;
    }
  }
  return best_t;
}

/// Bins records by max scaled-softmax confidence into equal-width bins over
/// [0, 1]; confidence 1.0 lands in the last bin.
inline ReliabilityDiagram reliability(std::span<const CalibrationRecord> records, double temperature, int num_bins = 10) {
  if (num_bins < 1) throw std::invalid_argument("num_bins must be >= 1");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  ReliabilityDiagram d;
  d.bins.resize(static_cast<std::size_t>(num_bins));
  std::vector<double> conf_sum(d.bins.size(), 0.0);
  std::vector<std::size_t> correct(d.bins.size(), 0);
  for (int i = 0; i < num_bins; ++i) {
    d.bins[i].lo = static_cast<double>(i) / num_bins;
    d.bins[i].hi = static_cast<double>(i + 1) / num_bins;
  }
  for (const auto& r : records) {
    const auto p = softmax_values(r.logits.values(), 1.0 / temperature);
    const auto pred = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    const double conf = p[pred];
    const auto bin = std::min<std::size_t>(static_cast<std::size_t>(conf * num_bins), d.bins.size() - 1);
    conf_sum[bin] += conf;
    d.bins[bin].count += 1;
    if (static_cast<int>(pred) == r.true_class) correct[bin] += 1;
  }
  for (std::size_t i = 0; i < d.bins.size(); ++i) {
    if (d.bins[i].count == 0) continue;
    const auto n = static_cast<double>(d.bins[i].count);
    d.bins[i].confidence = conf_sum[i] / n;
    d.bins[i].accuracy = static_cast<double>(correct[i]) / n;
  }
  return d;
}

/// Maximum |accuracy - confidence| over non-empty bins.
inline double mce(const ReliabilityDiagram& d) {
  double worst = -1.0;
  for (const auto& b : d.bins) {
    if (b.count > 0) worst = std::max(worst, b.gap());
  }
  if (worst < 0.0) throw DataError("mce: every bin is empty");
  return worst;
}

/// Mean |accuracy - confidence| over non-empty bins.
inline double ace(const ReliabilityDiagram& d) {
  double sum = 0.0;
  std::size_t used = 0;
  for (const auto& b : d.bins) {
    if (b.count == 0) continue;
    sum += b.gap();
    ++used;
  }
  if (used == 0) throw DataError("ace: every bin is empty");
  return sum / static_cast<double>(used);
}

/// -alpha_t (1 - p_t)^gamma log(p_t). An empty alpha means all ones.
inline double focal_loss(const ScoreVector& p, int true_class, std::span<const double> alpha = {}, double gamma = 2.0) {
  if (true_class < 0 || static_cast<std::size_t>(true_class) >= p.size()) {
    throw std::out_of_range("focal_loss: true_class out of range");
  }
  if (gamma < 0.0) throw std::invalid_argument("focal_loss: gamma must be non-negative");
  double a = 1.0;
  if (!alpha.empty()) {
    if (alpha.size() != p.size()) throw std::invalid_argument("focal_loss: alpha length differs from class count");
    a = alpha[static_cast<std::size_t>(true_class)];
    if (!(a > 0.0)) throw std::invalid_argument("focal_loss: alpha entries must be positive");
  }
  const double pt = p[static_cast<std::size_t>(true_class)];
  if (pt <= 0.0) throw DataError("focal_loss: p_t is zero, loss is infinite");
  return -a * std::pow(1.0 - pt, gamma) * std::log(pt);
}

// Record files: one {"logits": [k+1 reals], "true_class": int} per line.
inline std::vector<CalibrationRecord> parse_calibration_records(std::istream& in) {
  std::vector<CalibrationRecord> out;
  std::size_t width = 0;
  for (const auto& line : jsonl::read_records(in)) {
    jsonl::expect_fields(line, {"logits", "true_class"});
    auto z = jsonl::get_reals(line, jsonl::field(line, "logits"), "logits");
    const auto y = jsonl::get_int(line, jsonl::field(line, "true_class"), "true_class");
    if (z.size() < 2) throw ParseError(line.number, "need at least two logits");
    if (width == 0) width = z.size();
    if (z.size() != width) throw ParseError(line.number, "logit count differs from earlier records");
    if (y < 0 || static_cast<std::size_t>(y) >= z.size()) throw ParseError(line.number, "true_class out of range");
    try {
      out.push_back({LogitVector(std::move(z)), static_cast<int>(y)});
    } catch (const DataError& e) {
      throw ParseError(line.number, e.what());
    }
  }
  return out;
}

inline void write_calibration_records(std::ostream& out, std::span<const CalibrationRecord> records) {
  for (const auto& r : records) {
    jsonl::Json j;
    j["logits"] = r.logits.values();
    j["true_class"] = r.true_class;
    jsonl::write_record(out, j);
  }
}

}  // namespace mcdu
