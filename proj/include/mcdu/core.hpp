#pragma once

// Domain types shared across the library: boxes, run-length masks, score
// vectors, detections and per-image sample sets, plus the IoU primitives.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mcdu/error.hpp"

namespace mcdu {

/// Axis-aligned box in continuous pixel coordinates, origin top-left.
/// Area is (x2 - x1) * (y2 - y1); there is no +1 pixel convention.
class BBox {
 public:
  BBox(double x1, double y1, double x2, double y2) : x1_(x1), y1_(y1), x2_(x2), y2_(y2) {
    if (!(std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2))) {
      throw DataError("bbox coordinates must be finite");
    }
    if (!(x1 < x2 && y1 < y2)) {
      throw DataError("bbox must satisfy x1 < x2 and y1 < y2");
    }
  }

  double x1() const noexcept { return x1_; }
  double y1() const noexcept { return y1_; }
  double x2() const noexcept { return x2_; }
  double y2() const noexcept { return y2_; }

  double width() const noexcept { return x2_ - x1_; }
  double height() const noexcept { return y2_ - y1_; }
  double area() const noexcept { return width() * height(); }
  double center_x() const noexcept { return 0.5 * (x1_ + x2_); }
  double center_y() const noexcept { return 0.5 * (y1_ + y2_); }

  // Returns nullopt when clamping leaves no positive area.
  std::optional<BBox> clamped(double img_width, double img_height) const {
    const double cx1 = std::clamp(x1_, 0.0, img_width);
    const double cy1 = std::clamp(y1_, 0.0, img_height);
    const double cx2 = std::clamp(x2_, 0.0, img_width);
    const double cy2 = std::clamp(y2_, 0.0, img_height);
    if (!(cx1 < cx2 && cy1 < cy2)) return std::nullopt;
    return BBox(cx1, cy1, cx2, cy2);
  }

  bool operator==(const BBox&) const = default;

 private:
  double x1_, y1_, x2_, y2_;
};

/// Row-major binary grid, one byte per pixel (0 or 1).
struct Bitmap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  Bitmap() = default;
  Bitmap(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
  void set(int row, int col, bool on) { pixels[static_cast<std::size_t>(row) * width + col] = on ? 1 : 0; }

  bool operator==(const Bitmap&) const = default;
};

/// Run-length encoded binary mask. Runs alternate background/foreground,
/// starting with background, in row-major order. Only the leading run may be
/// zero.
class RleMask {
 public:
  RleMask(int height, int width, std::vector<std::uint32_t> runs)
      : height_(height), width_(width), runs_(std::move(runs)) {
    if (height <= 0 || width <= 0) throw DataError("mask dimensions must be positive");
    std::uint64_t total = 0;
    for (std::size_t i = 0; i < runs_.size(); ++i) {
      if (runs_[i] == 0 && i != 0) throw DataError("mask runs: zero-length run at position " + std::to_string(i));
      total += runs_[i];
    }
    const auto expected = static_cast<std::uint64_t>(height) * static_cast<std::uint64_t>(width);
    if (total != expected) {
      throw DataError("mask runs sum to " + std::to_string(total) + ", expected height*width = " +
                      std::to_string(expected));
    }
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(height_) * width_; }
  const std::vector<std::uint32_t>& runs() const noexcept { return runs_; }

  // Calls fn(start, length) for every foreground run, in linear pixel order.
  template <typename Fn>
  void for_each_foreground(Fn&& fn) const {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < runs_.size(); ++i) {
      if (i % 2 == 1) fn(pos, static_cast<std::size_t>(runs_[i]));
      pos += runs_[i];
    }
  }

  std::size_t area() const {
    std::size_t a = 0;
    for (std::size_t i = 1; i < runs_.size(); i += 2) a += runs_[i];
    return a;
  }

  bool empty() const { return area() == 0; }

  bool operator==(const RleMask&) const = default;

 private:
  int height_;
  int width_;
  std::vector<std::uint32_t> runs_;
};

inline RleMask rle_encode(const Bitmap& grid) {
  if (grid.height <= 0 || grid.width <= 0) throw DataError("cannot encode an empty grid");
  if (grid.pixels.size() != static_cast<std::size_t>(grid.height) * grid.width) {
    throw DataError("bitmap pixel count does not match its dimensions");
  }
  std::vector<std::uint32_t> runs;
  std::uint8_t current = 0;
  std::uint32_t length = 0;
  for (std::uint8_t px : grid.pixels) {
    const std::uint8_t v = px ? 1 : 0;
    if (v != current) {
      runs.push_back(length);
      current = v;
      length = 0;
    }
    ++length;
  }
  runs.push_back(length);
  return RleMask(grid.height, grid.width, std::move(runs));
}

inline Bitmap rle_decode(const RleMask& mask) {
  Bitmap grid(mask.height(), mask.width());
  mask.for_each_foreground([&](std::size_t start, std::size_t len) {
    std::fill_n(grid.pixels.begin() + static_cast<std::ptrdiff_t>(start), len, std::uint8_t{1});
  });
  return grid;
}

/// Encodes the box on an integer pixel grid: pixel (r, c) is foreground when
/// its center (c + 0.5, r + 0.5) lies inside [x1, x2) x [y1, y2).
inline RleMask rasterize_box(const BBox& box, int height, int width) {
  Bitmap grid(height, width);
  const int c0 = std::max(0, static_cast<int>(std::ceil(box.x1() - 0.5)));
  const int c1 = std::min(width, static_cast<int>(std::ceil(box.x2() - 0.5)));
  const int r0 = std::max(0, static_cast<int>(std::ceil(box.y1() - 0.5)));
  const int r1 = std::min(height, static_cast<int>(std::ceil(box.y2() - 0.5)));
  for (int r = r0; r < r1; ++r) {
    for (int c = c0; c < c1; ++c) grid.set(r, c, true);
  }
  return rle_encode(grid);
}

/// Probability vector over k foreground classes plus background at index 0.
class ScoreVector {
 public:
  explicit ScoreVector(std::vector<double> scores, double sum_tolerance = 1e-6) : scores_(std::move(scores)) {
    if (scores_.size() < 2) throw DataError("score vector needs background plus at least one class");
    double sum = 0.0;
    for (double s : scores_) {
      if (!std::isfinite(s) || s < 0.0 || s > 1.0) throw DataError("score outside [0, 1]");
      sum += s;
    }
    if (std::abs(sum - 1.0) > sum_tolerance) throw DataError("scores do not sum to 1");
  }

  std::size_t size() const noexcept { return scores_.size(); }
  std::size_t num_classes() const noexcept { return scores_.size() - 1; }
  double operator[](std::size_t i) const { return scores_[i]; }
  double background() const { return scores_[0]; }
  const std::vector<double>& values() const noexcept { return scores_; }

  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(scores_.begin(), scores_.end()) - scores_.begin());
  }

  bool operator==(const ScoreVector&) const = default;

 private:
  std::vector<double> scores_;
};

/// Unnormalized class logits, background at index 0.
class LogitVector {
 public:
  explicit LogitVector(std::vector<double> logits) : logits_(std::move(logits)) {
    if (logits_.empty()) throw DataError("empty logit vector");
    for (double z : logits_) {
      if (!std::isfinite(z)) throw DataError("logits must be finite");
    }
  }

  std::size_t size() const noexcept { return logits_.size(); }
  double operator[](std::size_t i) const { return logits_[i]; }
  const std::vector<double>& values() const noexcept { return logits_; }

  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(logits_.begin(), logits_.end()) - logits_.begin());
  }

  bool operator==(const LogitVector&) const = default;

 private:
  std::vector<double> logits_;
};

struct Detection {
  BBox bbox;
  ScoreVector scores;
  std::optional<RleMask> mask;
  int repetition = 0;

  bool operator==(const Detection&) const = default;
};

struct SampleSet {
  std::string image_id;
  int height = 0;
  int width = 0;
  int n_repetitions = 0;
  int num_classes = 0;
  std::vector<Detection> detections;

  bool operator==(const SampleSet&) const = default;
};

inline double box_iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  // Symmetric in (a, b): both the sum and the product commute exactly.
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

/// Foreground IoU of two masks. Two empty masks give 0.0.
inline double mask_iou(const RleMask& a, const RleMask& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw DataError("mask_iou: dimension mismatch");
  }
  std::vector<std::pair<std::size_t, std::size_t>> ia, ib;
  a.for_each_foreground([&](std::size_t s, std::size_t l) { ia.emplace_back(s, s + l); });
  b.for_each_foreground([&](std::size_t s, std::size_t l) { ib.emplace_back(s, s + l); });

  std::size_t inter = 0;
  std::size_t i = 0, j = 0;
  while (i < ia.size() && j < ib.size()) {
    const std::size_t lo = std::max(ia[i].first, ib[j].first);
    const std::size_t hi = std::min(ia[i].second, ib[j].second);
    if (lo < hi) inter += hi - lo;
    if (ia[i].second < ib[j].second) {
      ++i;
    } else {
      ++j;
    }
  }
  const std::size_t uni = a.area() + b.area() - inter;
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace mcdu
