#pragma once

// Average precision at a single IoU threshold for boxes or masks, with the
// COCO-style 101-point interpolated precision-recall curve.

#include <algorithm>
#include <functional>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mcdu/core.hpp"
#include "mcdu/error.hpp"
#include "mcdu/jsonl.hpp"
#include "mcdu/report.hpp"

namespace mcdu {

struct GroundTruthInstance {
  std::string image_id;
  BBox bbox;
  int class_id = 1;
  std::optional<RleMask> mask;
};

struct PredictedInstance {
  std::string image_id;
  BBox bbox;
  int class_id = 1;
  double confidence = 0.0;
  std::optional<RleMask> mask;
};

enum class EvalMode { Box, Mask };

inline const char* to_string(EvalMode m) { return m == EvalMode::Box ? "box" : "mask"; }

struct ClassAp {
  int class_id = 0;
  std::size_t num_gt = 0;
  std::size_t num_pred = 0;
  double ap = 0.0;
};

struct MatchEntry {
  std::size_t pred = 0;
  std::optional<std::size_t> gt;  // absent for false positives
  double iou = 0.0;
};

struct EvalResult {
  EvalMode mode = EvalMode::Box;
  double iou_threshold = 0.5;
  std::vector<ClassAp> per_class;  // classes with at least one ground truth
  std::optional<double> map50;     // absent when there is no ground truth
  std::vector<MatchEntry> matches;
};

/// Mean box, the foreground class with the highest mean score, that score as
/// confidence, and the consensus mask unless the cluster is a zero mask.
inline PredictedInstance cluster_to_detection(const ClusterReport& r, const std::string& image_id = {}) {
  const auto& mean = r.class_stats.mean_scores;
  if (mean.size() < 2) throw DataError("cluster_to_detection: no foreground classes");
  std::size_t best = 1;
  for (std::size_t j = 2; j < mean.size(); ++j) {
    if (mean[j] > mean[best]) best = j;
  }
  PredictedInstance p{image_id, r.box_stats.mean_box, static_cast<int>(best), mean[best], std::nullopt};
  if (!r.mask_stats.zero_mask && r.mask_stats.consensus_mask) p.mask = r.mask_stats.consensus_mask;
  return p;
}

/// 101-point interpolated AP from a ranked true/false-positive sequence.
inline double interpolated_ap(const std::vector<bool>& ranked_tp, std::size_t num_gt) {
  if (num_gt == 0) throw std::invalid_argument("interpolated_ap: no ground truth");
  const std::size_t n = ranked_tp.size();
  std::vector<double> recall(n), precision(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (ranked_tp[i]) ++tp;
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (int t = 0; t <= 100; ++t) {
    const double thr = t / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), thr);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

/// Per class: predictions ranked by confidence (ties keep input order), each
/// greedily matched to the unmatched same-image ground truth with the highest
/// IoU at or above the threshold. mAP averages classes that have ground truth.
inline EvalResult match_and_score(const std::vector<PredictedInstance>& preds, const std::vector<GroundTruthInstance>& gts,
                                  double iou_threshold = 0.5, EvalMode mode = EvalMode::Box) {
  EvalResult res;
  res.mode = mode;
  res.iou_threshold = iou_threshold;

  auto overlap = [&](const PredictedInstance& p, const GroundTruthInstance& g) {
    if (mode == EvalMode::Box) return box_iou(p.bbox, g.bbox);
    if (!p.mask || !g.mask) return 0.0;
    return mask_iou(*p.mask, *g.mask);
  };

  std::map<int, std::vector<std::size_t>> gt_by_class, pred_by_class;
  for (std::size_t i = 0; i < gts.size(); ++i) gt_by_class[gts[i].class_id].push_back(i);
  for (std::size_t i = 0; i < preds.size(); ++i) pred_by_class[preds[i].class_id].push_back(i);

  double ap_sum = 0.0;
  for (const auto& [cls, gt_idx] : gt_by_class) {
    std::vector<std::size_t> order = pred_by_class.count(cls) ? pred_by_class[cls] : std::vector<std::size_t>{};
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return preds[a].confidence > preds[b].confidence; });
    std::vector<bool> used(gts.size(), false);
    std::vector<bool> ranked_tp;
    ranked_tp.reserve(order.size());
    for (std::size_t pi : order) {
      std::optional<std::size_t> best;
      double best_iou = -1.0;
      for (std::size_t gi : gt_idx) {
        if (used[gi] || gts[gi].image_id != preds[pi].image_id) continue;
        const double v = overlap(preds[pi], gts[gi]);
        if (v >= iou_threshold && v > best_iou) {
          best_iou = v;
          best = gi;
        }
      }
      if (best) used[*best] = true;
      ranked_tp.push_back(best.has_value());
      res.matches.push_back({pi, best, best ? best_iou : 0.0});
    }
    ClassAp entry{cls, gt_idx.size(), order.size(), interpolated_ap(ranked_tp, gt_idx.size())};
    ap_sum += entry.ap;
    res.per_class.push_back(entry);
  }
  if (!res.per_class.empty()) res.map50 = ap_sum / static_cast<double>(res.per_class.size());
  return res;
}

/// CSV: class_id,num_gt,num_pred,ap then a summary row "mAP,<gt>,<pred>,<value>".
/// The summary value is empty when mAP is undefined.
inline void write_eval_csv(std::ostream& out, const EvalResult& r) {
  out << "class_id,num_gt,num_pred,ap\n";
  std::size_t gt = 0, pred = 0;
  for (const auto& c : r.per_class) {
    out << c.class_id << ',' << c.num_gt << ',' << c.num_pred << ',' << nlohmann::json(c.ap).dump() << '\n';
    gt += c.num_gt;
    pred += c.num_pred;
  }
  out << "mAP," << gt << ',' << pred << ',';
  if (r.map50) out << nlohmann::json(*r.map50).dump();
  out << '\n';
}

// Ground-truth files: one {"image_id", "bbox", "class_id", "mask_runs"?}
// record per line. Mask dimensions come from the image's sample file.
using ImageDims = std::function<std::optional<std::pair<int, int>>(const std::string&)>;

inline std::vector<GroundTruthInstance> parse_ground_truth(std::istream& in, const ImageDims& dims) {
  std::vector<GroundTruthInstance> out;
  for (const auto& line : jsonl::read_records(in)) {
    jsonl::expect_fields(line, {"image_id", "bbox", "class_id"}, {"mask_runs"});
    auto id = jsonl::get_string(line, jsonl::field(line, "image_id"), "image_id");
    const BBox box = jsonl::get_bbox(line, jsonl::field(line, "bbox"));
    const auto cls = jsonl::get_int(line, jsonl::field(line, "class_id"), "class_id");
    if (cls < 1) throw ParseError(line.number, "class_id must be a foreground class (>= 1)");
    std::optional<RleMask> mask;
    if (line.record.contains("mask_runs")) {
      const auto hw = dims ? dims(id) : std::nullopt;
      if (!hw) throw ParseError(line.number, "no image dimensions known for '" + id + "'");
      try {
        mask.emplace(hw->first, hw->second, jsonl::get_runs(line, jsonl::field(line, "mask_runs")));
      } catch (const ParseError&) {
        throw;
      } catch (const DataError& e) {
        throw ParseError(line.number, e.what());
      }
    }
    out.push_back({std::move(id), box, static_cast<int>(cls), std::move(mask)});
  }
  return out;
}

inline void write_ground_truth(std::ostream& out, const std::vector<GroundTruthInstance>& gts) {
  for (const auto& g : gts) {
    jsonl::Json j;
    j["image_id"] = g.image_id;
    j["bbox"] = jsonl::bbox_json(g.bbox);
    j["class_id"] = g.class_id;
    if (g.mask) j["mask_runs"] = g.mask->runs();
    jsonl::write_record(out, j);
  }
}

}  // namespace mcdu
