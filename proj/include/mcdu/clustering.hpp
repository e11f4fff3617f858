#pragma once

// Groups the sampled detections of one image into instance clusters.

#include <algorithm>
#include <cstddef>
#include <map>
#include <utility>
#include <vector>

#include "mcdu/agglomerative.hpp"
#include "mcdu/core.hpp"
#include "mcdu/error.hpp"
#include "mcdu/mixture.hpp"

namespace mcdu {

using BoxFeatures = PointMatrix<4>;

struct InstanceCluster {
  int cluster_id = 0;
  std::vector<Detection> members;
  // (repetition, index within that repetition) for each member.
  std::vector<std::pair<int, int>> source_labels;
  // Position of each member in the parent SampleSet.
  std::vector<std::size_t> detection_indices;
  // Set when the cluster exceeds the split threshold but could not be split.
  bool refused_split = false;

  std::size_t size() const noexcept { return members.size(); }
};

/// round-half-up(n_detections / n_repetitions), at least 1.
inline int estimate_component_count(std::size_t n_detections, int n_repetitions) {
  if (n_repetitions < 1) throw std::invalid_argument("n_repetitions must be >= 1");
  if (n_detections == 0) throw DataError("nothing to cluster");
  const auto n = static_cast<unsigned long long>(n_detections);
  const auto r = static_cast<unsigned long long>(n_repetitions);
  return std::max(1, static_cast<int>((2 * n + r) / (2 * r)));
}

inline BoxFeatures box_features(std::span<const Detection> detections) {
  BoxFeatures f(static_cast<Eigen::Index>(detections.size()), 4);
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const auto& b = detections[i].bbox;
    f.row(static_cast<Eigen::Index>(i)) << b.x1(), b.y1(), b.x2(), b.y2();
  }
  return f;
}

inline BoxFeatures box_features(const SampleSet& s) { return box_features(std::span<const Detection>(s.detections)); }

// Within-repetition index of every detection in a SampleSet.
inline std::vector<int> within_repetition_indices(const SampleSet& s) {
  std::map<int, int> seen;
  std::vector<int> out;
  out.reserve(s.detections.size());
  for (const auto& d : s.detections) out.push_back(seen[d.repetition]++);
  return out;
}

/// Groups detections by label. Clusters are ordered by their first member's
/// position; members keep SampleSet order, which is (repetition, within) order.
inline std::vector<InstanceCluster> build_instance_clusters(const SampleSet& s, std::span<const int> labels) {
  if (labels.size() != s.detections.size()) {
    throw std::invalid_argument("build_instance_clusters: label count differs from detection count");
  }
  const auto within = within_repetition_indices(s);
  std::vector<InstanceCluster> clusters;
  std::map<int, std::size_t> slot;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = slot.try_emplace(labels[i], clusters.size());
    if (inserted) clusters.emplace_back();
    auto& c = clusters[it->second];
    c.members.push_back(s.detections[i]);
    c.source_labels.emplace_back(s.detections[i].repetition, within[i]);
    c.detection_indices.push_back(i);
  }
  for (std::size_t c = 0; c < clusters.size(); ++c) clusters[c].cluster_id = static_cast<int>(c);
  return clusters;
}

namespace detail {

inline std::vector<InstanceCluster> partition_cluster(const InstanceCluster& c, std::span<const int> labels) {
  std::vector<InstanceCluster> parts;
  std::map<int, std::size_t> slot;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = slot.try_emplace(labels[i], parts.size());
    if (inserted) parts.emplace_back();
    auto& p = parts[it->second];
    p.members.push_back(c.members[i]);
    p.source_labels.push_back(c.source_labels[i]);
    p.detection_indices.push_back(c.detection_indices[i]);
  }
  return parts;
}

inline void split_recursive(const InstanceCluster& c, int n_repetitions, const ClusterConfig& cfg, int depth,
                            std::uint64_t seed, std::vector<InstanceCluster>& out) {
  if (static_cast<int>(c.size()) <= cfg.split_threshold) {
    out.push_back(c);
    return;
  }
  if (depth >= cfg.max_split_depth) {
    auto kept = c;
    kept.refused_split = true;
    out.push_back(std::move(kept));
    return;
  }
  const int k_max = std::max(2, estimate_component_count(c.size(), n_repetitions));
  ClusterConfig sub = cfg;
  sub.seed = seed;
  sub.weight_concentration_prior.reset();
  const auto state = fit_bgm<4>(box_features(std::span<const Detection>(c.members)), k_max, sub);
  const auto labels = assign_labels(state);
  auto parts = partition_cluster(c, labels);
  if (parts.size() < 2) {
    auto kept = c;
    kept.refused_split = true;
    out.push_back(std::move(kept));
    return;
  }
  for (std::size_t p = 0; p < parts.size(); ++p) {
    split_recursive(parts[p], n_repetitions, cfg, depth + 1, derive_seed(seed, p + 1), out);
  }
}

}  // namespace detail

/// Re-clusters every cluster larger than cfg.split_threshold with a fresh
/// mixture fit (K_max from the count heuristic, at least 2), recursively up
/// to cfg.max_split_depth. Clusters that will not split are kept whole and
/// flagged. The result is renumbered and still a partition.
inline std::vector<InstanceCluster> split_oversized(const std::vector<InstanceCluster>& clusters, int n_repetitions,
                                                    const ClusterConfig& cfg) {
  cfg.validate();
  std::vector<InstanceCluster> out;
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    detail::split_recursive(clusters[i], n_repetitions, cfg, 0, derive_seed(cfg.seed, 0x5EED0000ULL + i), out);
  }
  std::stable_sort(out.begin(), out.end(), [](const InstanceCluster& a, const InstanceCluster& b) {
    return a.detection_indices.front() < b.detection_indices.front();
  });
  for (std::size_t c = 0; c < out.size(); ++c) out[c].cluster_id = static_cast<int>(c);
  return out;
}

/// Upper component limit handed to the mixture: headroom over the heuristic.
inline int bgm_component_limit(int heuristic) { return std::max(2 * heuristic, heuristic + 2); }

inline std::vector<int> cluster_labels(const SampleSet& s, const ClusterConfig& cfg) {
  const int heuristic = estimate_component_count(s.detections.size(), s.n_repetitions);
  const auto features = box_features(s);
  if (cfg.algorithm == ClusterAlgorithm::Agg) {
    return fit_agglomerative(features, std::min<int>(heuristic, static_cast<int>(s.detections.size())));
  }
  const auto state = fit_bgm<4>(features, bgm_component_limit(heuristic), cfg);
  return assign_labels(state);
}

/// features -> component count -> fit -> labels -> clusters -> split rule.
inline std::vector<InstanceCluster> cluster_pipeline(const SampleSet& s, const ClusterConfig& cfg) {
  cfg.validate();
  if (s.detections.empty()) throw DataError("nothing to cluster");
  const auto labels = cluster_labels(s, cfg);
  return split_oversized(build_instance_clusters(s, labels), s.n_repetitions, cfg);
}

}  // namespace mcdu
