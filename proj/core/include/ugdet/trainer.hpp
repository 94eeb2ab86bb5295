#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ugdet/detector.hpp"
#include "ugdet/eval.hpp"
#include "ugdet/losses.hpp"
#include "ugdet/synthdata.hpp"

namespace ugdet {

struct TrainConfig {
  DetectorConfig det;
  double lambda_t = 1.0;
  double tau_cls = 0.5;
  double tau_bbox = 0.5;
  double lambda_efl = 0.5;
  // Desk-scale EMA default; 0.9996 presumes a far longer schedule and
  // remains available through config.
  double ema_alpha = 0.995;
  double lr = 0.05;
  double momentum = 0.9;
  double clip_norm = 5.0;  // global gradient-norm clip; <= 0 disables
  // Localization consistency runs at reduced weight: mislocalized
  // pseudo boxes otherwise feed a confirmation loop that collapses the
  // detector under strong scale shift. Anchor shapes get the gradient
  // boost back so anchor adaptation is not starved by the same factor.
  double loc_consistency_weight = 0.1;
  double anchor_grad_scale = 10.0;
  int pretrain_steps = 300;
  int mutual_steps = 200;
  int batch_size = 4;
  bool source_free = false;
  // L2 pull toward the pretrained weights, applied only when source_free:
  // without the supervised source term the student otherwise drifts on
  // its own pseudo labels.
  double source_anchor_weight = 0.02;
  // Background one-hot targets for unmatched candidates in the
  // consistency losses. Helpful with source supervision present; in
  // source-free runs they let teacher misses erase real objects.
  bool consistency_negatives = true;
  bool anchor_adapt = true;
  bool pretrain_strong_aug = false;
  enum class TargetMode { kProbabilistic, kThreshold };
  TargetMode target_mode = TargetMode::kProbabilistic;
  double score_threshold = 0.7;  // threshold-mode pseudo-box filter
  double pseudo_nms_iou = 0.5;
  int eval_every = 50;
  uint64_t seed = 1;

  void validate() const;  // throws std::invalid_argument
};

struct MetricRow {
  int step = 0;
  // NaN marks an absent value (e.g. source losses when source-free)
  double src_cls_rpn, src_cls_roi, src_bbox_rpn, src_bbox_roi;
  double tgt_cls_rpn, tgt_cls_roi, tgt_bbox_rpn, tgt_bbox_roi;
  double loss_total;
  double pseudo_box_count = 0.0;
  double mean_cat_entropy = 0.0;
  double mean_box_entropy = 0.0;
  double teacher_map = 0.0;
  double student_map = 0.0;
  double anchor_mean_w = 0.0;
  double anchor_mean_h = 0.0;

  MetricRow();
};

struct TrainState {
  DetectorParams student;
  DetectorParams teacher;
  int step = 0;
  std::vector<MetricRow> history;
  std::vector<double> velocity;  // SGD momentum buffer, student layout
  std::vector<double> pretrained;  // snapshot for the source-free anchor
  std::mt19937_64 rng;
  double source_only_map = 0.0;  // teacher test mAP before mutual learning
};

// Per-step statistics from one mutual learning step.
struct StepStats {
  double src_cls_rpn, src_cls_roi, src_bbox_rpn, src_bbox_roi;
  double tgt_cls_rpn, tgt_cls_roi, tgt_bbox_rpn, tgt_bbox_roi;
  double loss_total = 0.0;
  int pseudo_box_count = 0;
  double mean_cat_entropy = 0.0;
  double mean_box_entropy = 0.0;

  StepStats();
};

// SGD with momentum on the supervised source loss. Deterministic under
// the config seed. Aborts with std::runtime_error on non-finite loss.
DetectorParams pretrain(const TrainConfig& cfg,
                        const std::vector<Scene>& source,
                        std::vector<double>* loss_history = nullptr);

// theta_T = alpha*theta_T + (1-alpha)*theta_S, elementwise, anchors
// included.
void ema_update(DetectorParams& teacher, const DetectorParams& student,
                double alpha);

StepStats mutual_learn_step(TrainState& state, const TrainConfig& cfg,
                            std::span<const Scene> source_batch,
                            std::span<const Scene> target_batch);

// Full pipeline: pretrain, duplicate, mutual learning loop with
// periodic teacher/student evaluation on the test split. A warm start
// skips pretraining and seeds both networks from the given weights.
TrainState adapt(const TrainConfig& cfg, const std::vector<Scene>& source,
                 const std::vector<Scene>& target_train,
                 const std::vector<Scene>& target_test,
                 const DetectorParams* warm_start = nullptr);

struct RobustnessPoint {
  double tau_cls = 0.0, tau_bbox = 0.0, threshold = 0.0;
  double map = 0.0;
  bool failed = false;
};

struct RobustnessResult {
  std::vector<RobustnessPoint> tau_points;
  std::vector<RobustnessPoint> threshold_points;
  double tau_mean = 0.0, tau_std = 0.0;
  double threshold_mean = 0.0, threshold_std = 0.0;
};

// Temperature grid (probabilistic mode) vs hard-threshold grid
// (threshold mode). Pretrains once, then runs one warm-started
// adaptation per grid point from the shared base model.
RobustnessResult robustness_study(
    const TrainConfig& base_cfg, const std::vector<std::pair<double, double>>& tau_grid,
    const std::vector<double>& threshold_grid, const std::vector<Scene>& source,
    const std::vector<Scene>& target_train, const std::vector<Scene>& target_test);

}  // namespace ugdet
