#pragma once

// Ward-linkage agglomerative clustering on Euclidean distance, built with the
// nearest-neighbor-chain algorithm (O(n^2) time and memory).

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "mcdu/error.hpp"

namespace mcdu {

struct Merge {
  int a;
  int b;
  double height;
};

namespace detail {

class CondensedDistances {
 public:
  explicit CondensedDistances(int n) : n_(n), d_(static_cast<std::size_t>(n) * (n - 1) / 2, 0.0) {}

  double& operator()(int i, int j) { return d_[index(i, j)]; }
  double operator()(int i, int j) const { return d_[index(i, j)]; }

 private:
  std::size_t index(int i, int j) const {
    if (i > j) std::swap(i, j);
    return static_cast<std::size_t>(n_) * i - static_cast<std::size_t>(i) * (i + 1) / 2 + (j - i - 1);
  }

  int n_;
  std::vector<double> d_;
};

}  // namespace detail

/// Full Ward dendrogram. Merges come back sorted by height (stable), each
/// naming the representative indices of the merged clusters.
template <typename Derived>
std::vector<Merge> ward_linkage(const Eigen::MatrixBase<Derived>& points) {
  const int n = static_cast<int>(points.rows());
  std::vector<Merge> merges;
  if (n < 2) return merges;

  // Squared Euclidean distances; the Lance-Williams update below is the Ward
  // recurrence in squared form.
  detail::CondensedDistances dist(n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) dist(i, j) = (points.row(i) - points.row(j)).squaredNorm();
  }
  std::vector<double> size(n, 1.0);
  std::vector<bool> active(n, true);
  std::vector<int> chain;
  chain.reserve(n);

  for (int step = 0; step < n - 1; ++step) {
    if (chain.empty()) {
      for (int i = 0; i < n; ++i) {
        if (active[i]) {
          chain.push_back(i);
          break;
        }
      }
    }
    while (true) {
      const int a = chain.back();
      const int prev = chain.size() >= 2 ? chain[chain.size() - 2] : -1;
      int best = -1;
      double best_d = std::numeric_limits<double>::infinity();
      if (prev >= 0) {
        best = prev;
        best_d = dist(a, prev);
      }
      for (int c = 0; c < n; ++c) {
        if (!active[c] || c == a) continue;
        const double d = dist(a, c);
        if (d < best_d || (d == best_d && best != prev && c < best)) {
          best_d = d;
          best = c;
        }
      }
      if (best == prev) {
        chain.pop_back();
        chain.pop_back();
        const int lo = std::min(a, best);
        const int hi = std::max(a, best);
        merges.push_back({lo, hi, best_d});
        // Cluster `hi` folds into `lo`.
        for (int c = 0; c < n; ++c) {
          if (!active[c] || c == lo || c == hi) continue;
          const double nk = size[c];
          const double updated =
              ((size[lo] + nk) * dist(lo, c) + (size[hi] + nk) * dist(hi, c) - nk * best_d) / (size[lo] + size[hi] + nk);
          dist(lo, c) = updated;
        }
        size[lo] += size[hi];
        active[hi] = false;
        break;
      }
      chain.push_back(best);
    }
  }
  std::stable_sort(merges.begin(), merges.end(), [](const Merge& x, const Merge& y) { return x.height < y.height; });
  return merges;
}

/// Cuts the Ward dendrogram at exactly k clusters. Labels are numbered in
/// order of each cluster's smallest point index.
template <typename Derived>
std::vector<int> fit_agglomerative(const Eigen::MatrixBase<Derived>& points, int k) {
  const int n = static_cast<int>(points.rows());
  if (k < 1) throw std::invalid_argument("fit_agglomerative: k must be >= 1");
  if (k > n) throw DataError("fit_agglomerative: k = " + std::to_string(k) + " exceeds point count " + std::to_string(n));
  if (!points.allFinite()) throw DataError("fit_agglomerative: non-finite input");

  const auto merges = ward_linkage(points);
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (int m = 0; m < n - k; ++m) {
    const int ra = find(merges[m].a);
    const int rb = find(merges[m].b);
    parent[std::max(ra, rb)] = std::min(ra, rb);
  }
  std::vector<int> labels(n, -1);
  std::vector<int> root_label(n, -1);
  int next = 0;
  for (int i = 0; i < n; ++i) {
    const int r = find(i);
    if (root_label[r] < 0) root_label[r] = next++;
    labels[i] = root_label[r];
  }
  return labels;
}

}  // namespace mcdu
