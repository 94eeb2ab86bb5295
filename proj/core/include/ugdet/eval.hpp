#pragma once

#include <array>
#include <vector>

#include "ugdet/detector.hpp"

namespace ugdet {

struct ScoredBox {
  double score = 0.0;
  Box box;
  int scene = 0;
};

// All-point interpolated average precision at the given IoU threshold.
// Detections are sorted by descending score (ties by input order) and
// greedily matched to the best unmatched ground truth with IoU >=
// threshold, within their own scene. Returns NaN when there is no
// ground truth (AP undefined for the class).
double average_precision(std::vector<ScoredBox> dets,
                         const std::vector<std::vector<Box>>& gts_per_scene,
                         double iou_thresh = 0.5);

// Mean over classes with at least one ground truth; throws if none has.
double mean_ap(const std::vector<std::vector<ScoredBox>>& dets_per_class,
               const std::vector<std::vector<std::vector<Box>>>& gts_per_class,
               double iou_thresh = 0.5);

struct EvalReport {
  std::vector<double> per_class_ap;  // NaN where undefined
  double map = 0.0;
  int tp = 0, fp = 0, fn = 0;
  // ground-truth area quartile bins, smallest first
  std::array<int, 4> size_bin_tp{};
  std::array<int, 4> size_bin_fn{};
  double mean_cat_entropy = 0.0;  // over emitted detections
  double mean_box_entropy = 0.0;  // averaged over the 4 coordinates
};

EvalReport evaluate(const DetectorParams& params,
                    const std::vector<Scene>& scenes, double nms_iou = 0.5,
                    double iou_thresh = 0.5);

struct CalibrationBin {
  double predictor_mean = 0.0;
  double iou_mean = 0.0;
  int count = 0;
};

struct CalibrationReport {
  bool sufficient = false;
  double corr_var_iou = 0.0;    // Spearman rank correlation
  double corr_score_iou = 0.0;
  std::vector<CalibrationBin> by_variance;  // equal-count bins
  std::vector<CalibrationBin> by_score;
};

// For every detection with positive best-IoU ground truth overlap,
// records (mean coordinate variance, IoU, foreground score) and bins
// IoU by each predictor. Marked insufficient below 10 samples.
CalibrationReport sigma_iou_calibration(const DetectorParams& params,
                                        const std::vector<Scene>& scenes,
                                        double nms_iou = 0.5, int bins = 4);

// Spearman rank correlation with average ranks for ties; 0 by
// convention when either input is constant.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

struct EntropyPoint {
  int step = 0;
  double cat_entropy = 0.0;
  double box_entropy = 0.0;
};

}  // namespace ugdet
