#pragma once

// Synthetic Monte-Carlo dropout sample sets with known ground truth.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mcdu/calibration.hpp"
#include "mcdu/core.hpp"
#include "mcdu/evaluation.hpp"
#include "mcdu/mixture.hpp"

namespace mcdu {

enum class MaskShape { Ellipse, Box };

struct InstanceSpec {
  BBox true_box{0, 0, 1, 1};
  int true_class = 1;
  MaskShape mask_shape = MaskShape::Ellipse;
  double box_jitter_sigma = 2.0;  // pixels, independent per edge
  double class_confusion = 0.1;   // expected probability mass leaked off the true class
  double mask_noise = 0.0;        // flip probability for pixels on the mask contour band
  double miss_rate = 0.0;         // probability a repetition omits the instance
  double mask_presence = 1.0;     // probability an emitted detection carries a mask
};

struct SceneSpec {
  std::string image_id = "scene";
  int height = 480;
  int width = 640;
  int num_classes = 5;
  int n_repetitions = 100;
  std::uint64_t seed = 0;
  std::vector<InstanceSpec> instances;

  void validate() const {
    if (height <= 0 || width <= 0) throw DataError("scene dimensions must be positive");
    if (num_classes < 1) throw DataError("num_classes must be >= 1");
    if (n_repetitions < 1) throw DataError("n_repetitions must be >= 1");
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    for (const auto& in : instances) {
      if (in.true_class < 1 || in.true_class > num_classes) throw DataError("true_class out of range");
      if (!(in.box_jitter_sigma >= 0.0)) throw DataError("box_jitter_sigma must be >= 0");
      if (!prob(in.class_confusion) || !prob(in.mask_noise) || !prob(in.miss_rate) || !prob(in.mask_presence)) {
        throw DataError("instance probabilities must lie in [0, 1]");
      }
      if (!in.true_box.clamped(width, height)) throw DataError("true_box lies outside the image");
    }
  }
};

struct SynthScene {
  SampleSet samples;
  std::vector<int> true_labels;  // instance index per detection
  std::vector<GroundTruthInstance> ground_truth;
};

namespace detail {

inline Bitmap rasterize_shape(const BBox& box, MaskShape shape, int height, int width) {
  Bitmap grid(height, width);
  const int c0 = std::max(0, static_cast<int>(std::floor(box.x1())));
  const int c1 = std::min(width, static_cast<int>(std::ceil(box.x2())));
  const int r0 = std::max(0, static_cast<int>(std::floor(box.y1())));
  const int r1 = std::min(height, static_cast<int>(std::ceil(box.y2())));
  const double cx = box.center_x(), cy = box.center_y();
  const double ax = 0.5 * box.width(), ay = 0.5 * box.height();
  for (int r = r0; r < r1; ++r) {
    const double py = r + 0.5;
    for (int c = c0; c < c1; ++c) {
      const double px = c + 0.5;
      bool on = px >= box.x1() && px < box.x2() && py >= box.y1() && py < box.y2();
      if (on && shape == MaskShape::Ellipse) {
        const double u = (px - cx) / ax, v = (py - cy) / ay;
        on = u * u + v * v <= 1.0;
      }
      if (on) grid.set(r, c, true);
    }
  }
  return grid;
}

// Flips pixels on the one-pixel band either side of the contour.
inline void perturb_contour(Bitmap& grid, const BBox& box, double flip_p, std::mt19937_64& rng) {
  if (flip_p <= 0.0) return;
  const int c0 = std::max(0, static_cast<int>(std::floor(box.x1())) - 1);
  const int c1 = std::min(grid.width, static_cast<int>(std::ceil(box.x2())) + 1);
  const int r0 = std::max(0, static_cast<int>(std::floor(box.y1())) - 1);
  const int r1 = std::min(grid.height, static_cast<int>(std::ceil(box.y2())) + 1);
  const Bitmap original = grid;
  std::bernoulli_distribution flip(flip_p);
  for (int r = r0; r < r1; ++r) {
    for (int c = c0; c < c1; ++c) {
      const auto v = original.at(r, c);
      const bool edge = (r > 0 && original.at(r - 1, c) != v) || (r + 1 < grid.height && original.at(r + 1, c) != v) ||
                        (c > 0 && original.at(r, c - 1) != v) || (c + 1 < grid.width && original.at(r, c + 1) != v);
      if (edge && flip(rng)) grid.set(r, c, v == 0);
    }
  }
}

inline std::vector<double> confused_scores(int true_class, int num_classes, double confusion, std::mt19937_64& rng) {
  std::vector<double> s(static_cast<std::size_t>(num_classes) + 1, 0.0);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  const double leak = confusion > 0.0 ? std::min(1.0, confusion * u(rng)) : 0.0;
  s[static_cast<std::size_t>(true_class)] = 1.0 - leak;
  if (num_classes == 1) {
    s[0] = leak;
    return s;
  }
  // Half of the leaked mass goes to background, the rest to random other
  // foreground classes with flat Dirichlet weights.
  s[0] = 0.5 * leak;
  std::gamma_distribution<double> g(1.0, 1.0);
  std::vector<double> w(static_cast<std::size_t>(num_classes) + 1, 0.0);
  double total = 0.0;
  for (int j = 1; j <= num_classes; ++j) {
    if (j == true_class) continue;
    w[j] = g(rng);
    total += w[j];
  }
  for (int j = 1; j <= num_classes; ++j) {
    if (j == true_class) continue;
    s[j] = total > 0.0 ? 0.5 * leak * w[j] / total : 0.5 * leak / (num_classes - 1);
  }
  return s;
}

}  // namespace detail

/// Deterministic given spec.seed. Detections are emitted repetition-major,
/// instance order within a repetition.
inline SynthScene generate(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SynthScene out;
  out.samples.image_id = spec.image_id;
  out.samples.height = spec.height;
  out.samples.width = spec.width;
  out.samples.n_repetitions = spec.n_repetitions;
  out.samples.num_classes = spec.num_classes;

  for (const auto& in : spec.instances) {
    const BBox truth = *in.true_box.clamped(spec.width, spec.height);
    const Bitmap shape = detail::rasterize_shape(truth, in.mask_shape, spec.height, spec.width);
    out.ground_truth.push_back({spec.image_id, truth, in.true_class, rle_encode(shape)});
  }

  for (int rep = 0; rep < spec.n_repetitions; ++rep) {
    for (std::size_t i = 0; i < spec.instances.size(); ++i) {
      const auto& in = spec.instances[i];
      const BBox truth = out.ground_truth[i].bbox;
      if (unit(rng) < in.miss_rate) continue;

      std::optional<BBox> box;
      for (int attempt = 0; attempt < 16 && !box; ++attempt) {
        const double s = in.box_jitter_sigma;
        const double x1 = truth.x1() + s * normal(rng), y1 = truth.y1() + s * normal(rng);
        const double x2 = truth.x2() + s * normal(rng), y2 = truth.y2() + s * normal(rng);
        if (x1 < x2 && y1 < y2) box = BBox(x1, y1, x2, y2).clamped(spec.width, spec.height);
      }
      if (!box) box = truth;

      auto scores = detail::confused_scores(in.true_class, spec.num_classes, in.class_confusion, rng);
      std::optional<RleMask> mask;
      if (unit(rng) < in.mask_presence) {
        Bitmap grid = detail::rasterize_shape(*box, in.mask_shape, spec.height, spec.width);
        detail::perturb_contour(grid, *box, in.mask_noise, rng);
        mask = rle_encode(grid);
      }
      out.samples.detections.push_back(Detection{*box, ScoreVector(std::move(scores)), std::move(mask), rep});
      out.true_labels.push_back(static_cast<int>(i));
    }
  }
  return out;
}

/// Records whose base logits are calibrated by construction (labels drawn
/// from their softmax), then multiplied by true_temperature. Logit vectors
/// have num_classes + 1 entries.
inline std::vector<CalibrationRecord> generate_calibration_records(std::size_t n, double true_temperature, int num_classes,
                                                                   std::uint64_t seed, double logit_scale = 2.5) {
  if (n < 1) throw std::invalid_argument("need at least one record");
  if (!(true_temperature > 0.0)) throw std::invalid_argument("true_temperature must be positive");
  if (num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, logit_scale);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<CalibrationRecord> out;
  out.reserve(n);
  const auto width = static_cast<std::size_t>(num_classes) + 1;
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<double> w(width);
    for (double& x : w) x = normal(rng);
    const auto p = softmax_values(w);
    double u = unit(rng);
    int label = static_cast<int>(width) - 1;
    for (std::size_t j = 0; j < width; ++j) {
      u -= p[j];
      if (u < 0.0) {
        label = static_cast<int>(j);
        break;
      }
    }
    for (double& x : w) x *= true_temperature;
    out.push_back({LogitVector(std::move(w)), label});
  }
  return out;
}

}  // namespace mcdu
