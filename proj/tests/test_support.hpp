#pragma once

// Helpers shared by the unit and acceptance suites: partition agreement
// metrics and scene builders with known labels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <utility>
#include <vector>

#include "mcdu/synth.hpp"

namespace mcdu::testing {

/// Adjusted Rand Index between two labelings, computed from the contingency
/// table.
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  const auto n = static_cast<double>(a.size());
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1;
    ra[a[i]] += 1;
    rb[b[i]] += 1;
  }
  auto c2 = [](double x) { return x * (x - 1) / 2; };
  double sum_ij = 0, sum_a = 0, sum_b = 0;
  for (const auto& [k, v] : joint) sum_ij += c2(v);
  for (const auto& [k, v] : ra) sum_a += c2(v);
  for (const auto& [k, v] : rb) sum_b += c2(v);
  const double expected = sum_a * sum_b / c2(n);
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;  // both partitions trivial and identical in shape
  return (sum_ij - expected) / (max_index - expected);
}

/// Same partition up to renumbering.
inline bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  std::map<int, int> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto [x, ins1] = ab.try_emplace(a[i], b[i]);
    auto [y, ins2] = ba.try_emplace(b[i], a[i]);
    if (x->second != b[i] || y->second != a[i]) return false;
  }
  return true;
}

/// Labels per SampleSet detection derived from a cluster list.
inline std::vector<int> labels_from_clusters(const std::vector<InstanceCluster>& clusters, std::size_t n) {
  std::vector<int> labels(n, -1);
  for (const auto& c : clusters) {
    for (std::size_t idx : c.detection_indices) labels[idx] = c.cluster_id;
  }
  return labels;
}

struct SceneLayout {
  int n_instances = 3;
  double sigma = 2.0;
  // Minimum distance between true box feature vectors (x1, y1, x2, y2), in
  // units of sigma.
  double min_separation_sigmas = 10.0;
  double max_separation_sigmas = 1e9;
  int width = 640;
  int height = 480;
  int n_repetitions = 100;
  int num_classes = 5;
  double class_confusion = 0.1;
  double mask_noise = 0.0;
  MaskShape mask_shape = MaskShape::Ellipse;
};

inline double feature_distance(const BBox& a, const BBox& b) {
  const double d0 = a.x1() - b.x1(), d1 = a.y1() - b.y1(), d2 = a.x2() - b.x2(), d3 = a.y2() - b.y2();
  return std::sqrt(d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3);
}

/// Random scene with instances placed by rejection sampling so that every
/// pair of true boxes is at least min_separation_sigmas * sigma apart in box
/// feature space, and (when max_separation_sigmas is finite) every instance
/// after the first lies within max_separation_sigmas * sigma of another.
inline SceneSpec random_scene(const SceneLayout& layout, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> size_w(30.0, 120.0), size_h(30.0, 120.0);
  std::uniform_int_distribution<int> cls(1, layout.num_classes);
  SceneSpec spec;
  spec.image_id = "scene_" + std::to_string(seed);
  spec.height = layout.height;
  spec.width = layout.width;
  spec.num_classes = layout.num_classes;
  spec.n_repetitions = layout.n_repetitions;
  spec.seed = seed ^ 0xA5A5A5A5ULL;
  const double min_d = layout.min_separation_sigmas * layout.sigma;
  const double max_d = layout.max_separation_sigmas * layout.sigma;
  const double margin = 4.0 * layout.sigma + 1.0;
  while (static_cast<int>(spec.instances.size()) < layout.n_instances) {
    const double w = size_w(rng), h = size_h(rng);
    BBox candidate{0, 0, 1, 1};
    if (spec.instances.empty() || !std::isfinite(max_d) || max_d > 1e6) {
      std::uniform_real_distribution<double> x(margin, layout.width - w - margin), y(margin, layout.height - h - margin);
      const double x1 = x(rng), y1 = y(rng);
      candidate = BBox(x1, y1, x1 + w, y1 + h);
    } else {
      // Offset an existing instance by a random feature-space step.
      std::uniform_int_distribution<std::size_t> pick(0, spec.instances.size() - 1);
      const BBox& base = spec.instances[pick(rng)].true_box;
      std::normal_distribution<double> dir(0.0, 1.0);
      double v[4];
      double norm = 0.0;
      for (double& c : v) {
        c = dir(rng);
        norm += c * c;
      }
      norm = std::sqrt(norm);
      std::uniform_real_distribution<double> len(min_d, max_d);
      const double l = len(rng);
      const double x1 = base.x1() + l * v[0] / norm, y1 = base.y1() + l * v[1] / norm;
      const double x2 = base.x2() + l * v[2] / norm, y2 = base.y2() + l * v[3] / norm;
      if (!(x2 - x1 > 10.0 && y2 - y1 > 10.0)) continue;
      if (x1 < margin || y1 < margin || x2 > layout.width - margin || y2 > layout.height - margin) continue;
      candidate = BBox(x1, y1, x2, y2);
    }
    bool ok = true;
    for (const auto& other : spec.instances) ok = ok && feature_distance(other.true_box, candidate) >= min_d;
    if (!ok) continue;
    InstanceSpec in;
    in.true_box = candidate;
    in.true_class = cls(rng);
    in.box_jitter_sigma = layout.sigma;
    in.class_confusion = layout.class_confusion;
    in.mask_noise = layout.mask_noise;
    in.mask_shape = layout.mask_shape;
    spec.instances.push_back(in);
  }
  return spec;
}

}  // namespace mcdu::testing
