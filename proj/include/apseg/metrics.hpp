#pragma once

// Instance segmentation and point detection metrics: panoptic quality
// (DQ, SQ, PQ, binary and multi-class), aggregated Jaccard index, Dice and
// radius-matched detection / classification precision, recall and F1.

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "apseg/types.hpp"

namespace apseg::metrics {

struct IouMatch {
  int pred_id = 0;
  int gt_id = 0;
  double iou = 0.0;
};

struct InstanceMatching {
  std::vector<IouMatch> matches;  // IoU > 0.5, ascending gt id
  std::vector<int> unmatched_pred;
  std::vector<int> unmatched_gt;
};

/// Pairs with IoU strictly above 0.5 (necessarily one-to-one).
InstanceMatching match_instances_iou(const InstanceMap& pred, const InstanceMap& gt);

struct PanopticResult {
  double dq = 0.0, sq = 0.0, pq = 0.0;
  int tp = 0, fp = 0, fn = 0;
  std::vector<double> matched_ious;
};

/// Class-agnostic panoptic quality (identical to binary_pq).
PanopticResult panoptic_quality(const InstanceMap& pred, const InstanceMap& gt);
PanopticResult binary_pq(const InstanceMap& pred, const InstanceMap& gt);

struct MultiClassPQ {
  std::map<int, PanopticResult> per_class;  // classes present in gt
  double mpq = 0.0;                         // mean PQ over those classes
};

/// Per-class PQ over class-restricted instance sets, using each map's class_of.
MultiClassPQ multi_class_pq(const InstanceMap& pred, const InstanceMap& gt);

/// Aggregated Jaccard index; both maps empty -> 1.
double aji(const InstanceMap& pred, const InstanceMap& gt);

/// Binary foreground Dice; both empty -> 1.
double dice(const InstanceMap& pred, const InstanceMap& gt);

struct PRF {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  int tp = 0, fp = 0, fn = 0;
};

PRF prf_from_counts(int tp, int fp, int fn);

struct DetectionResult {
  PRF detection;
  PRF classification;              // micro over all classes
  std::map<int, PRF> per_class;    // classes appearing in gt or predictions
  double radius = 0.0;
};

/// Hungarian matching of prompts to gt points on distance; a pair counts only
/// when its distance is <= radius. The matching first maximizes the number of
/// in-radius pairs, then minimizes their total distance. A matched prompt of
/// the wrong class is a detection TP but a classification error.
DetectionResult detection_scores(const PromptSet& pred, std::span<const Point2> gt_points,
                                 std::span<const int> gt_classes, double radius);

/// One row of the metrics report.
struct SceneMetrics {
  std::string scene;
  double dice = 0, aji = 0, dq = 0, sq = 0, pq = 0, bpq = 0, mpq = 0;
  double det_p = 0, det_r = 0, det_f = 0, cls_p = 0, cls_r = 0, cls_f = 0;
  std::map<int, double> pq_class;
};

SceneMetrics evaluate_scene(const std::string& name, const InstanceMap& pred, const InstanceMap& gt,
                            const PromptSet& prompts, std::span<const Point2> gt_points,
                            std::span<const int> gt_classes, double radius);

/// Column-wise mean; per-class PQ averaged over the scenes containing that class.
SceneMetrics aggregate(const std::vector<SceneMetrics>& rows, const std::string& name = "mean");

/// Fixed columns: scene, dice, aji, dq, sq, pq, bpq, mpq, det_p, det_r, det_f,
/// cls_p, cls_r, cls_f, pq_class_{k} for k < num_classes.
void write_report_csv(const std::filesystem::path& path, const std::vector<SceneMetrics>& rows, int num_classes);
void write_report_json(const std::filesystem::path& path, const std::vector<SceneMetrics>& rows,
                       const SceneMetrics& summary);
std::vector<SceneMetrics> read_report_csv(const std::filesystem::path& path);

}  // namespace apseg::metrics
