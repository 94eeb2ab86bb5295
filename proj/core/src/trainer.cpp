#include "ugdet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace ugdet {

namespace {

constexpr double kAnchorFloor = 0.25;
const double kNaN = std::numeric_limits<double>::quiet_NaN();

void sgd_step(DetectorParams& p, const std::vector<double>& grads,
              std::vector<double>& velocity, double lr, double momentum,
              double clip_norm) {
  if (velocity.size() != p.flat.size()) velocity.assign(p.flat.size(), 0.0);
  double norm2 = 0.0;
  for (double g : grads) norm2 += g * g;
  const double norm = std::sqrt(norm2);
  const double scale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;
  for (size_t i = 0; i < p.flat.size(); ++i) {
    velocity[i] = momentum * velocity[i] + scale * grads[i];
    p.flat[i] -= lr * velocity[i];
  }
  for (double& w : p.segment(DetectorParams::kAnchorW)) w = std::max(w, kAnchorFloor);
  for (double& h : p.segment(DetectorParams::kAnchorH)) h = std::max(h, kAnchorFloor);
}

// Deterministic epoch-shuffled batch cursor.
class BatchCursor {
 public:
  BatchCursor(size_t n, uint64_t seed) : order_(n), rng_(seed) {
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
  }
  size_t next() {
    if (pos_ >= order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<size_t> order_;
  std::mt19937_64 rng_;
  size_t pos_ = 0;
};

struct HeadAccum {
  Tensor sum;     // sum of per-item losses on the tape
  int count = 0;
  void add(Tape& tape, Tensor item, int n = 1) {
    sum = sum.valid() ? tape.add(sum, item) : item;
    count += n;
  }
  Tensor mean(Tape& tape) const {
    if (count == 0) return tape.constant(0.0);
    return tape.scalar_mul(sum, 1.0 / count);
  }
};

// Keeps at most max(16, 4x positives) RPN negatives, evenly spaced, so
// the background term does not drown the foreground one.
void subsample_negatives(MatchResult& m) {
  const size_t cap = std::max<size_t>(16, 4 * m.positives.size());
  if (m.negatives.size() <= cap) return;
  std::vector<int> kept;
  kept.reserve(cap);
  const double stride = static_cast<double>(m.negatives.size()) / cap;
  for (size_t i = 0; i < cap; ++i) {
    kept.push_back(m.negatives[static_cast<size_t>(i * stride)]);
  }
  m.negatives = std::move(kept);
}

// -sum target .* log(gathered rows), returned as a sum (not mean).
Tensor ce_rows_sum(Tape& tape, Tensor probs, const std::vector<int>& rows,
                   std::vector<double> targets, int arity) {
  Tensor g = tape.gather_rows(probs, rows);
  Tensor t = tape.constant({static_cast<int>(rows.size()), arity}, std::move(targets));
  return tape.scalar_mul(
      tape.sum(tape.mul(t, tape.log(tape.add_scalar(g, 1e-12)))), -1.0);
}

struct TargetTerms {
  HeadAccum cls_rpn, cls_roi, bbox_rpn, bbox_roi;
  int pseudo_count = 0;
  double cat_entropy = 0.0;
  double box_entropy = 0.0;
};

void accumulate_target_scene(Tape& tape, const TapeParams& student_tp,
                             const DetectorParams& teacher, const Scene& base,
                             const TrainConfig& cfg, uint64_t weak_seed,
                             uint64_t strong_seed, const EflConfig& efl,
                             TargetTerms& out) {
  auto [weak, wrec] = weak_augment(base, weak_seed);
  std::vector<PseudoBox> pls = infer_pseudo_boxes(teacher, weak, cfg.pseudo_nms_iou);
  if (cfg.target_mode == TrainConfig::TargetMode::kThreshold) {
    std::erase_if(pls, [&](const PseudoBox& p) { return p.score < cfg.score_threshold; });
  }
  for (const PseudoBox& p : pls) {
    out.cat_entropy += categorical_entropy(p.cls);
    double be = 0.0;
    for (double v : p.delta_var) be += gaussian_entropy(v);
    out.box_entropy += be / 4.0;
  }
  out.pseudo_count += static_cast<int>(pls.size());
  if (pls.empty()) return;  // no target terms for this scene

  auto [strong, srec] = strong_augment(base, strong_seed);
  std::vector<Box> pl_boxes;
  pl_boxes.reserve(pls.size());
  for (const PseudoBox& p : pls) pl_boxes.push_back(p.box);
  pl_boxes = transform_weak_to_strong(pl_boxes, wrec, srec, base.grid);

  ForwardOut fo = forward(tape, student_tp, strong);
  MatchResult m1 = match_targets(fo.anchor_boxes, pl_boxes,
                                 cfg.det.rpn_pos_thresh, cfg.det.rpn_neg_thresh);
  subsample_negatives(m1);
  MatchResult m2 = match_targets(fo.proposals, pl_boxes,
                                 cfg.det.roi_pos_thresh, cfg.det.roi_pos_thresh);
  subsample_negatives(m2);
  const bool probabilistic =
      cfg.target_mode == TrainConfig::TargetMode::kProbabilistic;
  const int arity = cfg.det.num_classes + 1;

  // RPN classification: positives carry the merged-sharpened teacher
  // distribution, negatives a background one-hot (weight 1).
  {
    HeadAccum scene_acc;
    for (int i : m1.positives) {
      CategoricalDist t = pls[m1.assignment[i]].cls;
      if (!probabilistic) t = CategoricalDist::one_hot(pls[m1.assignment[i]].label - 1, arity);
      Tensor row = tape.gather_rows(fo.s1_cls, {i});
      scene_acc.add(tape, consistency_cls_loss(tape, t, row, Head::kRpn,
                                               probabilistic ? cfg.tau_cls : 1.0, efl));
    }
    if (!m1.negatives.empty() && cfg.consistency_negatives) {
      std::vector<double> targets;
      targets.reserve(m1.negatives.size() * 2);
      for (size_t i = 0; i < m1.negatives.size(); ++i) {
        targets.insert(targets.end(), {0.0, 1.0});
      }
      scene_acc.add(tape, ce_rows_sum(tape, fo.s1_cls, m1.negatives,
                                      std::move(targets), 2),
                    static_cast<int>(m1.negatives.size()));
    }
    if (scene_acc.count > 0) out.cls_rpn.add(tape, scene_acc.mean(tape));
  }

  // ROI classification
  {
    HeadAccum scene_acc;
    for (int i : m2.positives) {
      CategoricalDist t = pls[m2.assignment[i]].cls;
      if (!probabilistic) t = CategoricalDist::one_hot(pls[m2.assignment[i]].label - 1, arity);
      Tensor row = tape.gather_rows(fo.s2_cls, {i});
      scene_acc.add(tape, consistency_cls_loss(tape, t, row, Head::kRoi,
                                               probabilistic ? cfg.tau_cls : 1.0, efl));
    }
    if (!m2.negatives.empty() && cfg.consistency_negatives) {
      std::vector<double> targets;
      for (size_t i = 0; i < m2.negatives.size(); ++i) {
        std::vector<double> oh(arity, 0.0);
        oh[arity - 1] = 1.0;
        targets.insert(targets.end(), oh.begin(), oh.end());
      }
      scene_acc.add(tape, ce_rows_sum(tape, fo.s2_cls, m2.negatives,
                                      std::move(targets), arity),
                    static_cast<int>(m2.negatives.size()));
    }
    if (scene_acc.count > 0) out.cls_roi.add(tape, scene_acc.mean(tape));
  }

  // Localization consistency is scaled by the teacher's foreground mass
  // for the pseudo box: spurious low-score boxes keep benign (mostly
  // background) classification targets but would otherwise impose
  // full-strength regression toward arbitrary coordinates.
  auto fg_mass = [](const PseudoBox& p) { return 1.0 - p.cls.probs.back(); };

  // RPN bbox: teacher means re-encoded against the trainable anchor
  // shapes, so anchor gradients flow only through this target term.
  {
    HeadAccum scene_acc;
    for (int i : m1.positives) {
      const PseudoBox& pl = pls[m1.assignment[i]];
      const Box target_box = pl_boxes[m1.assignment[i]];
      const int k = fo.anchor_shape_idx[i];
      const Box& ab = fo.anchor_boxes[i];
      Tensor sm = tape.gather_rows(fo.s1_mean, {i});
      Tensor sv = tape.gather_rows(fo.s1_var, {i});
      const double fw = probabilistic ? fg_mass(pl) : 1.0;
      if (probabilistic) {
        Tensor wk = tape.gather_rows(student_tp.anchor_w(), {k});
        Tensor hk = tape.gather_rows(student_tp.anchor_h(), {k});
        Tensor tx = tape.mul(tape.constant(target_box.cx - ab.cx),
                             tape.reciprocal_pos(wk));
        Tensor ty = tape.mul(tape.constant(target_box.cy - ab.cy),
                             tape.reciprocal_pos(hk));
        Tensor tw = tape.sub(tape.constant(std::log(target_box.w)), tape.log(wk));
        Tensor th = tape.sub(tape.constant(std::log(target_box.h)), tape.log(hk));
        Tensor tm = tape.concat({tx, ty, tw, th});
        scene_acc.add(tape,
                      tape.scalar_mul(consistency_bbox_loss(tape, tm, pl.delta_var,
                                                            sm, sv, cfg.tau_bbox, efl),
                                      fw));
      } else {
        // point-regression NLL: Dirac target against the student Gaussian
        const auto t = encode_deltas(target_box, ab);
        Tensor tm = tape.constant({4}, {t[0], t[1], t[2], t[3]});
        Tensor d = tape.sub(tm, tape.reshape(sm, {4}));
        Tensor svf = tape.reshape(sv, {4});
        Tensor per = tape.scalar_mul(
            tape.add(tape.add(tape.log(svf),
                              tape.mul(tape.square(d), tape.reciprocal_pos(svf))),
                     tape.constant(1.8378770664093453)),
            0.5);
        scene_acc.add(tape, tape.sum(per));
      }
    }
    if (scene_acc.count > 0) out.bbox_rpn.add(tape, scene_acc.mean(tape));
  }

  // ROI bbox: the proposal reference is fixed, no anchor gradient here.
  {
    HeadAccum scene_acc;
    for (int i : m2.positives) {
      const PseudoBox& pl = pls[m2.assignment[i]];
      const Box target_box = pl_boxes[m2.assignment[i]];
      const auto t = encode_deltas(target_box, fo.proposals[i]);
      Tensor sm = tape.gather_rows(fo.s2_mean, {i});
      Tensor sv = tape.gather_rows(fo.s2_var, {i});
      if (probabilistic) {
        BoxDist td;
        for (int c = 0; c < 4; ++c) td.coords[c] = {t[c], pl.delta_var[c]};
        scene_acc.add(tape,
                      tape.scalar_mul(consistency_bbox_loss(tape, td, sm, sv,
                                                            cfg.tau_bbox, efl),
                                      fg_mass(pl)));
      } else {
        Tensor tm = tape.constant({4}, {t[0], t[1], t[2], t[3]});
        Tensor d = tape.sub(tm, tape.reshape(sm, {4}));
        Tensor svf = tape.reshape(sv, {4});
        Tensor per = tape.scalar_mul(
            tape.add(tape.add(tape.log(svf),
                              tape.mul(tape.square(d), tape.reciprocal_pos(svf))),
                     tape.constant(1.8378770664093453)),
            0.5);
        scene_acc.add(tape, tape.sum(per));
      }
    }
    if (scene_acc.count > 0) out.bbox_roi.add(tape, scene_acc.mean(tape));
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (lambda_t < 0.0) throw std::invalid_argument("lambda_t must be >= 0");
  if (tau_cls <= 0.0 || tau_cls > 1.0) throw std::invalid_argument("tau_cls must lie in (0,1]");
  if (tau_bbox <= 0.0 || tau_bbox > 1.0) throw std::invalid_argument("tau_bbox must lie in (0,1]");
  if (lambda_efl < 0.0) throw std::invalid_argument("lambda_efl must be >= 0");
  if (ema_alpha < 0.0 || ema_alpha >= 1.0) throw std::invalid_argument("ema_alpha must lie in [0,1)");
  if (lr <= 0.0) throw std::invalid_argument("lr must be positive");
  if (pretrain_steps < 0 || mutual_steps < 0) throw std::invalid_argument("negative step count");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (loc_consistency_weight < 0.0) {
    throw std::invalid_argument("loc_consistency_weight must be >= 0");
  }
  if (anchor_grad_scale < 0.0) throw std::invalid_argument("anchor_grad_scale must be >= 0");
  if (source_anchor_weight < 0.0) {
    throw std::invalid_argument("source_anchor_weight must be >= 0");
  }
  if (score_threshold < 0.0 || score_threshold > 1.0) {
    throw std::invalid_argument("score_threshold must lie in [0,1]");
  }
}

MetricRow::MetricRow()
    : src_cls_rpn(kNaN), src_cls_roi(kNaN), src_bbox_rpn(kNaN), src_bbox_roi(kNaN),
      tgt_cls_rpn(kNaN), tgt_cls_roi(kNaN), tgt_bbox_rpn(kNaN), tgt_bbox_roi(kNaN),
      loss_total(kNaN) {}

StepStats::StepStats()
    : src_cls_rpn(kNaN), src_cls_roi(kNaN), src_bbox_rpn(kNaN), src_bbox_roi(kNaN),
      tgt_cls_rpn(kNaN), tgt_cls_roi(kNaN), tgt_bbox_rpn(kNaN), tgt_bbox_roi(kNaN) {}

DetectorParams pretrain(const TrainConfig& cfg, const std::vector<Scene>& source,
                        std::vector<double>* loss_history) {
  cfg.validate();
  if (source.empty()) throw std::invalid_argument("empty source set");
  DetectorParams student = DetectorParams::init(cfg.det, cfg.seed);
  std::vector<double> velocity(student.flat.size(), 0.0);
  std::mt19937_64 rng(cfg.seed ^ 0x5deece66dULL);
  BatchCursor cursor(source.size(), rng());

  for (int step = 0; step < cfg.pretrain_steps; ++step) {
    Tape tape;
    TapeParams tp = lift(tape, student, /*trainable=*/true);
    Tensor total;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const Scene& base = source[cursor.next()];
      const uint64_t aug_seed = rng();
      Scene scene = cfg.pretrain_strong_aug ? strong_augment(base, aug_seed).first
                                            : weak_augment(base, aug_seed).first;
      ForwardOut fo = forward(tape, tp, scene);
      MatchResult m1 = match_targets(fo.anchor_boxes, scene.boxes,
                                     cfg.det.rpn_pos_thresh,
                                     cfg.det.rpn_neg_thresh);
      subsample_negatives(m1);
      MatchResult m2 = match_targets(fo.proposals, scene.boxes,
                                     cfg.det.roi_pos_thresh,
                                     cfg.det.roi_pos_thresh);
      subsample_negatives(m2);
      LossBreakdown lb = supervised_loss(tape, fo, scene, m1, m2);
      total = total.valid() ? tape.add(total, lb.total) : lb.total;
    }
    total = tape.scalar_mul(total, 1.0 / cfg.batch_size);
    if (!std::isfinite(total.scalar())) {
      throw std::runtime_error("pretraining diverged: non-finite loss");
    }
    if (loss_history) loss_history->push_back(total.scalar());
    tape.backward(total);
    sgd_step(student, read_grads(tape, tp, student), velocity, cfg.lr, cfg.momentum,
             cfg.clip_norm);
  }
  return student;
}

void ema_update(DetectorParams& teacher, const DetectorParams& student,
                double alpha) {
  if (teacher.flat.size() != student.flat.size()) {
    throw std::invalid_argument("parameter shape mismatch");
  }
  for (size_t i = 0; i < teacher.flat.size(); ++i) {
    teacher.flat[i] = alpha * teacher.flat[i] + (1.0 - alpha) * student.flat[i];
  }
}

StepStats mutual_learn_step(TrainState& state, const TrainConfig& cfg,
                            std::span<const Scene> source_batch,
                            std::span<const Scene> target_batch) {
  StepStats stats;
  const EflConfig efl{cfg.target_mode == TrainConfig::TargetMode::kProbabilistic
                          ? cfg.lambda_efl
                          : 0.0,
                      efl_norms(cfg.det.num_classes)};
  Tape tape;
  TapeParams tp = lift(tape, state.student, /*trainable=*/true);

  // supervised source part
  Tensor src_total = tape.constant(0.0);
  if (!cfg.source_free && !source_batch.empty()) {
    HeadAccum cls_rpn, cls_roi, bbox_rpn, bbox_roi;
    for (const Scene& base : source_batch) {
      Scene scene = weak_augment(base, state.rng()).first;
      ForwardOut fo = forward(tape, tp, scene);
      MatchResult m1 = match_targets(fo.anchor_boxes, scene.boxes,
                                     cfg.det.rpn_pos_thresh,
                                     cfg.det.rpn_neg_thresh);
      subsample_negatives(m1);
      MatchResult m2 = match_targets(fo.proposals, scene.boxes,
                                     cfg.det.roi_pos_thresh,
                                     cfg.det.roi_pos_thresh);
      subsample_negatives(m2);
      LossBreakdown lb = supervised_loss(tape, fo, scene, m1, m2);
      if (lb.n_cls_rpn > 0) cls_rpn.add(tape, lb.cls_rpn);
      if (lb.n_cls_roi > 0) cls_roi.add(tape, lb.cls_roi);
      if (lb.n_pos_rpn > 0) bbox_rpn.add(tape, lb.bbox_rpn);
      if (lb.n_pos_roi > 0) bbox_roi.add(tape, lb.bbox_roi);
    }
    Tensor a = cls_rpn.mean(tape), b = cls_roi.mean(tape);
    Tensor c = bbox_rpn.mean(tape), d = bbox_roi.mean(tape);
    src_total = tape.add(tape.add(a, b), tape.add(c, d));
    stats.src_cls_rpn = a.scalar();
    stats.src_cls_roi = b.scalar();
    stats.src_bbox_rpn = c.scalar();
    stats.src_bbox_roi = d.scalar();
  }

  // target consistency part
  TargetTerms terms;
  for (const Scene& base : target_batch) {
    const uint64_t weak_seed = state.rng();
    const uint64_t strong_seed = state.rng();
    accumulate_target_scene(tape, tp, state.teacher, base, cfg, weak_seed,
                            strong_seed, efl, terms);
  }
  Tensor t_cls_rpn = terms.cls_rpn.mean(tape);
  Tensor t_cls_roi = terms.cls_roi.mean(tape);
  Tensor t_bbox_rpn = tape.scalar_mul(terms.bbox_rpn.mean(tape),
                                      cfg.loc_consistency_weight);
  Tensor t_bbox_roi = tape.scalar_mul(terms.bbox_roi.mean(tape),
                                      cfg.loc_consistency_weight);
  Tensor tgt_total = tape.add(tape.add(t_cls_rpn, t_cls_roi),
                              tape.add(t_bbox_rpn, t_bbox_roi));
  stats.tgt_cls_rpn = t_cls_rpn.scalar();
  stats.tgt_cls_roi = t_cls_roi.scalar();
  stats.tgt_bbox_rpn = t_bbox_rpn.scalar();
  stats.tgt_bbox_roi = t_bbox_roi.scalar();
  stats.pseudo_box_count = terms.pseudo_count;
  if (terms.pseudo_count > 0) {
    stats.mean_cat_entropy = terms.cat_entropy / terms.pseudo_count;
    stats.mean_box_entropy = terms.box_entropy / terms.pseudo_count;
  }

  Tensor total = total_loss(tape, src_total, tgt_total, cfg.lambda_t, cfg.source_free);
  stats.loss_total = total.scalar();
  if (!std::isfinite(stats.loss_total)) {
    throw std::runtime_error("mutual learning diverged: non-finite loss");
  }
  tape.backward(total);
  std::vector<double> grads = read_grads(tape, tp, state.student);
  if (cfg.source_free && cfg.source_anchor_weight > 0.0 &&
      state.pretrained.size() == state.student.flat.size()) {
    for (size_t i = 0; i < grads.size(); ++i) {
      grads[i] += cfg.source_anchor_weight * (state.student.flat[i] - state.pretrained[i]);
    }
  }
  {
    // anchor shapes only receive gradient through the down-weighted
    // localization consistency; anchor_grad_scale restores their
    // effective step size (0 when anchor adaptation is disabled)
    const double s = cfg.anchor_adapt ? cfg.anchor_grad_scale : 0.0;
    const int off_w = state.student.segment_offset(DetectorParams::kAnchorW);
    const int end_h = state.student.segment_offset(DetectorParams::kAnchorH) +
                      state.student.segment_size(DetectorParams::kAnchorH);
    for (int i = off_w; i < end_h; ++i) grads[i] *= s;
  }
  sgd_step(state.student, grads, state.velocity, cfg.lr, cfg.momentum,
           cfg.clip_norm);
  ema_update(state.teacher, state.student, cfg.ema_alpha);
  ++state.step;
  return stats;
}

TrainState adapt(const TrainConfig& cfg, const std::vector<Scene>& source,
                 const std::vector<Scene>& target_train,
                 const std::vector<Scene>& target_test,
                 const DetectorParams* warm_start) {
  cfg.validate();
  TrainState state;
  state.student = warm_start ? *warm_start : pretrain(cfg, source);
  state.teacher = state.student;
  state.pretrained = state.student.flat;
  state.velocity.assign(state.student.flat.size(), 0.0);
  state.rng.seed(cfg.seed ^ 0xa0761d64ULL);

  auto anchor_means = [&](MetricRow& row) {
    const auto w = state.teacher.anchor_widths();
    const auto h = state.teacher.anchor_heights();
    row.anchor_mean_w = std::accumulate(w.begin(), w.end(), 0.0) / w.size();
    row.anchor_mean_h = std::accumulate(h.begin(), h.end(), 0.0) / h.size();
  };

  {
    MetricRow row;
    row.step = 0;
    const EvalReport tr = evaluate(state.teacher, target_test);
    row.teacher_map = tr.map;
    row.student_map = tr.map;
    anchor_means(row);
    state.source_only_map = tr.map;
    state.history.push_back(row);
  }

  BatchCursor src_cursor(std::max<size_t>(source.size(), 1), cfg.seed * 31 + 7);
  BatchCursor tgt_cursor(std::max<size_t>(target_train.size(), 1), cfg.seed * 37 + 11);

  for (int step = 1; step <= cfg.mutual_steps; ++step) {
    std::vector<Scene> src_batch, tgt_batch;
    if (!cfg.source_free) {
      for (int b = 0; b < cfg.batch_size; ++b) src_batch.push_back(source[src_cursor.next()]);
    }
    for (int b = 0; b < cfg.batch_size; ++b) {
      tgt_batch.push_back(target_train[tgt_cursor.next()]);
    }
    StepStats stats = mutual_learn_step(state, cfg, src_batch, tgt_batch);

    if (step % cfg.eval_every == 0 || step == cfg.mutual_steps) {
      MetricRow row;
      row.step = step;
      row.src_cls_rpn = stats.src_cls_rpn;
      row.src_cls_roi = stats.src_cls_roi;
      row.src_bbox_rpn = stats.src_bbox_rpn;
      row.src_bbox_roi = stats.src_bbox_roi;
      row.tgt_cls_rpn = stats.tgt_cls_rpn;
      row.tgt_cls_roi = stats.tgt_cls_roi;
      row.tgt_bbox_rpn = stats.tgt_bbox_rpn;
      row.tgt_bbox_roi = stats.tgt_bbox_roi;
      row.loss_total = stats.loss_total;
      row.pseudo_box_count = stats.pseudo_box_count;
      row.mean_cat_entropy = stats.mean_cat_entropy;
      row.mean_box_entropy = stats.mean_box_entropy;
      row.teacher_map = evaluate(state.teacher, target_test).map;
      row.student_map = evaluate(state.student, target_test).map;
      anchor_means(row);
      state.history.push_back(row);
    }
  }
  return state;
}

RobustnessResult robustness_study(
    const TrainConfig& base_cfg,
    const std::vector<std::pair<double, double>>& tau_grid,
    const std::vector<double>& threshold_grid, const std::vector<Scene>& source,
    const std::vector<Scene>& target_train,
    const std::vector<Scene>& target_test) {
  if (tau_grid.empty() || threshold_grid.empty()) {
    throw std::invalid_argument("empty robustness grid");
  }
  RobustnessResult res;
  const DetectorParams base = pretrain(base_cfg, source);
  auto run = [&](TrainConfig cfg, RobustnessPoint pt) {
    try {
      TrainState st = adapt(cfg, source, target_train, target_test, &base);
      pt.map = st.history.back().teacher_map;
    } catch (const std::exception&) {
      pt.failed = true;
    }
    return pt;
  };
  for (const auto& [tc, tb] : tau_grid) {
    TrainConfig cfg = base_cfg;
    cfg.target_mode = TrainConfig::TargetMode::kProbabilistic;
    cfg.tau_cls = tc;
    cfg.tau_bbox = tb;
    RobustnessPoint pt;
    pt.tau_cls = tc;
    pt.tau_bbox = tb;
    res.tau_points.push_back(run(cfg, pt));
  }
  for (double thr : threshold_grid) {
    TrainConfig cfg = base_cfg;
    cfg.target_mode = TrainConfig::TargetMode::kThreshold;
    cfg.score_threshold = thr;
    RobustnessPoint pt;
    pt.threshold = thr;
    res.threshold_points.push_back(run(cfg, pt));
  }
  auto stats = [](const std::vector<RobustnessPoint>& pts, double& mean, double& sd) {
    std::vector<double> maps;
    for (const auto& p : pts) {
      if (!p.failed) maps.push_back(p.map);
    }
    if (maps.empty()) return;
    mean = std::accumulate(maps.begin(), maps.end(), 0.0) / maps.size();
    double acc = 0.0;
    for (double m : maps) acc += (m - mean) * (m - mean);
    sd = std::sqrt(acc / maps.size());
  };
  stats(res.tau_points, res.tau_mean, res.tau_std);
  stats(res.threshold_points, res.threshold_mean, res.threshold_std);
  return res;
}

}  // namespace ugdet
