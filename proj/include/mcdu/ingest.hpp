#pragma once

// Prediction-sample files and the postprocessing filters applied to them.
//
// File layout, one JSON object per line:
//   {"image_id": str, "height": int, "width": int, "n_repetitions": int, "num_classes": int}
//   {"repetition": int, "bbox": [x1, y1, x2, y2], "scores": [k+1 reals], "mask_runs": [ints]}
// The first line is the header; "mask_runs" is optional. Field order is fixed.

#include <algorithm>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "mcdu/core.hpp"
#include "mcdu/error.hpp"
#include "mcdu/jsonl.hpp"

namespace mcdu {

struct IngestConfig {
  // Detections whose background score is strictly above this are erased.
  double background_threshold = 0.45;
  bool clamp_boxes = true;
  // The stock detector rule: drop detections where no foreground score
  // exceeds this. Disabled unless set.
  std::optional<double> legacy_min_class_score;

  void validate() const {
    if (!(background_threshold >= 0.0 && background_threshold <= 1.0)) {
      throw std::invalid_argument("background_threshold must lie in [0, 1]");
    }
  }
};

inline SampleSet parse_sample_set(std::istream& in, const IngestConfig& cfg = {}) {
  const auto lines = jsonl::read_records(in);
  if (lines.empty()) throw ParseError(1, "missing header record");

  const auto& header = lines.front();
  jsonl::expect_fields(header, {"image_id", "height", "width", "n_repetitions", "num_classes"});
  SampleSet s;
  s.image_id = jsonl::get_string(header, jsonl::field(header, "image_id"), "image_id");
  const auto h = jsonl::get_int(header, jsonl::field(header, "height"), "height");
  const auto w = jsonl::get_int(header, jsonl::field(header, "width"), "width");
  const auto n = jsonl::get_int(header, jsonl::field(header, "n_repetitions"), "n_repetitions");
  const auto k = jsonl::get_int(header, jsonl::field(header, "num_classes"), "num_classes");
  if (h <= 0 || w <= 0) throw ParseError(header.number, "image dimensions must be positive");
  if (n <= 0) throw ParseError(header.number, "n_repetitions must be positive");
  if (k <= 0) throw ParseError(header.number, "num_classes must be positive");
  s.height = static_cast<int>(h);
  s.width = static_cast<int>(w);
  s.n_repetitions = static_cast<int>(n);
  s.num_classes = static_cast<int>(k);

  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto& line = lines[i];
    jsonl::expect_fields(line, {"repetition", "bbox", "scores"}, {"mask_runs"});
    const auto rep = jsonl::get_int(line, jsonl::field(line, "repetition"), "repetition");
    if (rep < 0 || rep >= n) {
      throw ParseError(line.number, "repetition " + std::to_string(rep) + " outside [0, " + std::to_string(n) + ")");
    }
    BBox box = jsonl::get_bbox(line, jsonl::field(line, "bbox"));
    const bool inside = box.x1() >= 0.0 && box.y1() >= 0.0 && box.x2() <= s.width && box.y2() <= s.height;
    if (!inside) {
      if (!cfg.clamp_boxes) throw ParseError(line.number, "bbox outside image bounds");
      auto c = box.clamped(s.width, s.height);
      if (!c) throw ParseError(line.number, "bbox lies entirely outside the image");
      box = *c;
    }
    auto raw_scores = jsonl::get_reals(line, jsonl::field(line, "scores"), "scores");
    if (raw_scores.size() != static_cast<std::size_t>(k) + 1) {
      throw ParseError(line.number, "expected " + std::to_string(k + 1) + " scores, got " +
                                        std::to_string(raw_scores.size()));
    }
    std::optional<RleMask> mask;
    if (line.record.contains("mask_runs")) {
      try {
        mask.emplace(s.height, s.width, jsonl::get_runs(line, jsonl::field(line, "mask_runs")));
      } catch (const ParseError&) {
        throw;
      } catch (const DataError& e) {
        throw ParseError(line.number, e.what());
      }
    }
    try {
      s.detections.push_back(Detection{box, ScoreVector(std::move(raw_scores)), std::move(mask), static_cast<int>(rep)});
    } catch (const ParseError&) {
      throw;
    } catch (const DataError& e) {
      throw ParseError(line.number, e.what());
    }
  }
  std::stable_sort(s.detections.begin(), s.detections.end(),
                   [](const Detection& a, const Detection& b) { return a.repetition < b.repetition; });
  return s;
}

inline void write_sample_set(std::ostream& out, const SampleSet& s) {
  jsonl::Json header;
  header["image_id"] = s.image_id;
  header["height"] = s.height;
  header["width"] = s.width;
  header["n_repetitions"] = s.n_repetitions;
  header["num_classes"] = s.num_classes;
  jsonl::write_record(out, header);
  for (const auto& d : s.detections) {
    jsonl::Json rec;
    rec["repetition"] = d.repetition;
    rec["bbox"] = jsonl::bbox_json(d.bbox);
    rec["scores"] = d.scores.values();
    if (d.mask) rec["mask_runs"] = d.mask->runs();
    jsonl::write_record(out, rec);
  }
}

/// Positions of the detections whose background score is at most the
/// threshold, ascending.
inline std::vector<std::size_t> background_survivors(const SampleSet& s, const IngestConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < s.detections.size(); ++i) {
    if (s.detections[i].scores.background() <= cfg.background_threshold) keep.push_back(i);
  }
  return keep;
}

/// Keeps detections whose background score is at most the threshold.
inline SampleSet filter_background(const SampleSet& s, const IngestConfig& cfg) {
  SampleSet out = s;
  out.detections.clear();
  for (std::size_t i : background_survivors(s, cfg)) out.detections.push_back(s.detections[i]);
  return out;
}

// Stock rule kept for A/B comparison: erase a detection when no foreground
// class scores above min_score.
inline SampleSet filter_legacy(const SampleSet& s, double min_score) {
  SampleSet out = s;
  out.detections.clear();
  for (const auto& d : s.detections) {
    const auto& v = d.scores.values();
    if (std::any_of(v.begin() + 1, v.end(), [&](double p) { return p > min_score; })) out.detections.push_back(d);
  }
  return out;
}

/// Applies the background filter, then the legacy filter when configured.
inline SampleSet postprocess(const SampleSet& s, const IngestConfig& cfg) {
  SampleSet out = filter_background(s, cfg);
  if (cfg.legacy_min_class_score) out = filter_legacy(out, *cfg.legacy_min_class_score);
  return out;
}

}  // namespace mcdu
