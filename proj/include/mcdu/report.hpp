#pragma once

// Per-cluster uncertainty statistics: box mean/std and center scatter, class
// score mean/std (background included), pixelwise mask mean/std heatmaps with
// a consensus mask, IoU-to-mean samples and their density curves.
//
// Standard deviations are population standard deviations: a cluster is taken
// as the full Monte-Carlo sample.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcdu/clustering.hpp"
#include "mcdu/core.hpp"
#include "mcdu/kde.hpp"

namespace mcdu {

struct BoxStats {
  BBox mean_box{0, 0, 1, 1};
  std::array<double, 4> edge_std{};  // x1, y1, x2, y2
  std::vector<std::pair<double, double>> centers;
};

struct ClassStats {
  std::vector<double> mean_scores;
  std::vector<double> std_scores;
  std::vector<int> top_classes;  // by mean, descending; ties by index
};

struct MaskStats {
  int height = 0;
  int width = 0;
  std::vector<double> mean_mask;  // row-major, empty when no member has a mask
  std::vector<double> std_mask;
  std::optional<RleMask> consensus_mask;
  bool zero_mask = true;
  int coverage_count = 0;
  double mask_threshold = 0.5;
};

struct ClusterReport {
  int cluster_id = 0;
  std::size_t size = 0;
  bool refused_split = false;
  BoxStats box_stats;
  ClassStats class_stats;
  MaskStats mask_stats;
  std::vector<double> box_iou_samples;
  std::vector<double> mask_iou_samples;
  // Absent when the samples are degenerate (fewer than two, or no spread).
  std::optional<KdeCurve> box_kde;
  std::optional<KdeCurve> mask_kde;
};

inline BoxStats box_stats(const InstanceCluster& c) {
  if (c.members.empty()) throw std::invalid_argument("box_stats: empty cluster");
  const double n = static_cast<double>(c.members.size());
  std::array<double, 4> mean{};
  for (const auto& d : c.members) {
    mean[0] += d.bbox.x1();
    mean[1] += d.bbox.y1();
    mean[2] += d.bbox.x2();
    mean[3] += d.bbox.y2();
  }
  for (double& m : mean) m /= n;
  std::array<double, 4> var{};
  BoxStats s;
  for (const auto& d : c.members) {
    const std::array<double, 4> v{d.bbox.x1(), d.bbox.y1(), d.bbox.x2(), d.bbox.y2()};
    for (int i = 0; i < 4; ++i) var[i] += (v[i] - mean[i]) * (v[i] - mean[i]);
    s.centers.emplace_back(d.bbox.center_x(), d.bbox.center_y());
  }
  for (int i = 0; i < 4; ++i) s.edge_std[i] = std::sqrt(var[i] / n);
  s.mean_box = BBox(mean[0], mean[1], mean[2], mean[3]);
  return s;
}

inline ClassStats class_stats(const InstanceCluster& c) {
  if (c.members.empty()) throw std::invalid_argument("class_stats: empty cluster");
  const std::size_t k = c.members.front().scores.size();
  ClassStats s;
  s.mean_scores.assign(k, 0.0);
  s.std_scores.assign(k, 0.0);
  for (const auto& d : c.members) {
    if (d.scores.size() != k) throw DataError("class_stats: inconsistent score vector lengths");
    for (std::size_t j = 0; j < k; ++j) s.mean_scores[j] += d.scores[j];
  }
  const double n = static_cast<double>(c.members.size());
  for (double& m : s.mean_scores) m /= n;
  for (const auto& d : c.members) {
    for (std::size_t j = 0; j < k; ++j) {
      const double diff = d.scores[j] - s.mean_scores[j];
      s.std_scores[j] += diff * diff;
    }
  }
  for (double& v : s.std_scores) v = std::sqrt(v / n);
  s.top_classes.resize(k);
  std::iota(s.top_classes.begin(), s.top_classes.end(), 0);
  std::stable_sort(s.top_classes.begin(), s.top_classes.end(),
                   [&](int a, int b) { return s.mean_scores[a] > s.mean_scores[b]; });
  return s;
}

/// Pixelwise foreground frequency over mask-carrying members, its Bernoulli
/// standard deviation and the consensus mask (mean >= threshold).
inline MaskStats mask_stats(const InstanceCluster& c, double mask_threshold = 0.5) {
  MaskStats s;
  s.mask_threshold = mask_threshold;
  std::vector<std::int64_t> delta;
  for (const auto& d : c.members) {
    if (!d.mask) continue;
    if (s.coverage_count == 0) {
      s.height = d.mask->height();
      s.width = d.mask->width();
      delta.assign(d.mask->pixel_count() + 1, 0);
    } else if (d.mask->height() != s.height || d.mask->width() != s.width) {
      throw DataError("mask_stats: mask dimensions differ within the cluster");
    }
    d.mask->for_each_foreground([&](std::size_t start, std::size_t len) {
      delta[start] += 1;
      delta[start + len] -= 1;
    });
    ++s.coverage_count;
  }
  if (s.coverage_count == 0) {
    s.zero_mask = true;
    return s;
  }
  const std::size_t pixels = delta.size() - 1;
  s.mean_mask.resize(pixels);
  s.std_mask.resize(pixels);
  Bitmap consensus(s.height, s.width);
  const double n = static_cast<double>(s.coverage_count);
  std::int64_t count = 0;
  for (std::size_t i = 0; i < pixels; ++i) {
    count += delta[i];
    const double m = static_cast<double>(count) / n;
    s.mean_mask[i] = m;
    s.std_mask[i] = std::sqrt(m * (1.0 - m));
    consensus.pixels[i] = m >= mask_threshold ? 1 : 0;
  }
  s.consensus_mask = rle_encode(consensus);
  s.zero_mask = s.consensus_mask->empty();
  return s;
}

struct IouSamples {
  std::vector<double> box;
  std::vector<double> mask;
};

/// IoU of every member against the cluster mean box and, for mask-carrying
/// members, against the consensus mask.
inline IouSamples iou_to_mean(const InstanceCluster& c, const BoxStats& b, const MaskStats& m) {
  IouSamples out;
  out.box.reserve(c.members.size());
  for (const auto& d : c.members) out.box.push_back(box_iou(d.bbox, b.mean_box));
  if (!m.zero_mask && m.consensus_mask) {
    for (const auto& d : c.members) {
      if (d.mask) out.mask.push_back(mask_iou(*d.mask, *m.consensus_mask));
    }
  }
  return out;
}

inline std::optional<KdeCurve> try_kde(const std::vector<double>& samples, int grid_size = 256) {
  try {
    return kde(samples, grid_size);
  } catch (const DataError&) {
    return std::nullopt;
  }
}

inline ClusterReport build_report(const InstanceCluster& c, double mask_threshold = 0.5) {
  ClusterReport r;
  r.cluster_id = c.cluster_id;
  r.size = c.members.size();
  r.refused_split = c.refused_split;
  r.box_stats = box_stats(c);
  r.class_stats = class_stats(c);
  r.mask_stats = mask_stats(c, mask_threshold);
  auto samples = iou_to_mean(c, r.box_stats, r.mask_stats);
  r.box_iou_samples = std::move(samples.box);
  r.mask_iou_samples = std::move(samples.mask);
  r.box_kde = try_kde(r.box_iou_samples);
  r.mask_kde = try_kde(r.mask_iou_samples);
  return r;
}

namespace detail {

inline nlohmann::ordered_json kde_json(const std::optional<KdeCurve>& k) {
  if (!k) return nullptr;
  nlohmann::ordered_json j;
  j["bandwidth"] = k->bandwidth;
  j["sample_mean"] = k->sample_mean;
  j["sample_std"] = k->sample_std;
  j["grid"] = k->grid;
  j["density"] = k->density;
  return j;
}

}  // namespace detail

/// Report document. Heatmaps are not embedded; see write_pgm.
///
/// {cluster_id, size, refused_split,
///  box: {mean_box[4], edge_std[4], centers[[cx, cy]...]},
///  classes: {mean[k+1], std[k+1], top_classes[k+1]},
///  mask: {height, width, coverage_count, zero_mask, mask_threshold,
///         consensus_area, consensus_runs | null},
///  iou: {box[], mask[]},
///  kde: {box_degenerate, mask_degenerate,
///        box: {bandwidth, sample_mean, sample_std, grid[], density[]} | null,
///        mask: ... | null}}
inline nlohmann::ordered_json report_json(const ClusterReport& r) {
  nlohmann::ordered_json j;
  j["cluster_id"] = r.cluster_id;
  j["size"] = r.size;
  j["refused_split"] = r.refused_split;

  const auto& b = r.box_stats.mean_box;
  nlohmann::ordered_json box;
  box["mean_box"] = {b.x1(), b.y1(), b.x2(), b.y2()};
  box["edge_std"] = r.box_stats.edge_std;
  auto centers = nlohmann::ordered_json::array();
  for (const auto& [cx, cy] : r.box_stats.centers) centers.push_back({cx, cy});
  box["centers"] = std::move(centers);
  j["box"] = std::move(box);

  nlohmann::ordered_json cls;
  cls["mean"] = r.class_stats.mean_scores;
  cls["std"] = r.class_stats.std_scores;
  cls["top_classes"] = r.class_stats.top_classes;
  j["classes"] = std::move(cls);

  const auto& m = r.mask_stats;
  nlohmann::ordered_json mask;
  mask["height"] = m.height;
  mask["width"] = m.width;
  mask["coverage_count"] = m.coverage_count;
  mask["zero_mask"] = m.zero_mask;
  mask["mask_threshold"] = m.mask_threshold;
  mask["consensus_area"] = m.consensus_mask ? m.consensus_mask->area() : 0;
  mask["consensus_runs"] = m.consensus_mask ? nlohmann::ordered_json(m.consensus_mask->runs()) : nlohmann::ordered_json(nullptr);
  j["mask"] = std::move(mask);

  nlohmann::ordered_json iou;
  iou["box"] = r.box_iou_samples;
  iou["mask"] = r.mask_iou_samples;
  j["iou"] = std::move(iou);

  nlohmann::ordered_json k;
  k["box_degenerate"] = !r.box_kde.has_value();
  k["mask_degenerate"] = !r.mask_kde.has_value();
  k["box"] = detail::kde_json(r.box_kde);
  k["mask"] = detail::kde_json(r.mask_kde);
  j["kde"] = std::move(k);
  return j;
}

/// Binary 8-bit PGM of a row-major [0, 1] field; each value v is written as
/// round(clamp(v * scale, 0, 1) * 255). Use scale 1 for mean masks and 2 for
/// std masks (a Bernoulli std never exceeds 0.5).
inline void write_pgm(std::ostream& out, int height, int width, const std::vector<double>& values, double scale = 1.0) {
  if (values.size() != static_cast<std::size_t>(height) * width) throw std::invalid_argument("write_pgm: size mismatch");
  out << "P5\n" << width << ' ' << height << "\n255\n";
  std::vector<char> bytes(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::clamp(values[i] * scale, 0.0, 1.0);
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace mcdu
