#include "ugdet/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace ugdet {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;
// Guards log against probabilities that underflowed to exactly zero.
constexpr double kProbEps = 1e-12;
}

int& efl_clamp_count() {
  static thread_local int count = 0;
  return count;
}

namespace {

// -1/N * sum target .* log(probs_rows)
Tensor mean_cross_entropy(Tape& tape, Tensor probs, const std::vector<int>& rows,
                          std::vector<double> targets, int arity) {
  Tensor g = tape.gather_rows(probs, rows);
  Tensor t = tape.constant({static_cast<int>(rows.size()), arity},
                           std::move(targets));
  Tensor s = tape.sum(tape.mul(t, tape.log(tape.add_scalar(g, kProbEps))));
  return tape.scalar_mul(s, -1.0 / static_cast<double>(rows.size()));
}

// mean over rows of sum over 4 coords of
// 0.5*(log 2pi + log var + (t - mean)^2 / var)
Tensor mean_dirac_gaussian_nll(Tape& tape, Tensor mean, Tensor var,
                               const std::vector<int>& rows,
                               std::vector<double> targets) {
  const int np = static_cast<int>(rows.size());
  Tensor m = tape.gather_rows(mean, rows);
  Tensor v = tape.gather_rows(var, rows);
  Tensor t = tape.constant({np, 4}, std::move(targets));
  Tensor resid = tape.sub(t, m);
  Tensor per = tape.add(tape.add(tape.log(v),
                                 tape.mul(tape.square(resid), tape.reciprocal_pos(v))),
                        tape.constant(kLog2Pi));
  return tape.scalar_mul(tape.sum(per), 0.5 / static_cast<double>(np));
}

}  // namespace

LossBreakdown supervised_loss(Tape& tape, const ForwardOut& fo,
                              const Scene& scene, const MatchResult& m_rpn,
                              const MatchResult& m_roi) {
  LossBreakdown lb;
  const int n = static_cast<int>(fo.s2_cls.shape()[1]) - 1;

  // RPN classification over positives + negatives
  {
    std::vector<int> rows;
    std::vector<double> targets;
    for (int i : m_rpn.positives) {
      rows.push_back(i);
      targets.insert(targets.end(), {1.0, 0.0});
    }
    for (int i : m_rpn.negatives) {
      rows.push_back(i);
      targets.insert(targets.end(), {0.0, 1.0});
    }
    lb.n_cls_rpn = static_cast<int>(rows.size());
    lb.cls_rpn = rows.empty() ? tape.constant(0.0)
                              : mean_cross_entropy(tape, fo.s1_cls, rows,
                                                   std::move(targets), 2);
  }

  // RPN bbox over positives
  {
    std::vector<int> rows = m_rpn.positives;
    std::vector<double> targets;
    for (int i : rows) {
      const Box& gt = scene.boxes[m_rpn.assignment[i]];
      const auto t = encode_deltas(gt, fo.anchor_boxes[i]);
      targets.insert(targets.end(), t.begin(), t.end());
    }
    lb.n_pos_rpn = static_cast<int>(rows.size());
    lb.bbox_rpn = rows.empty() ? tape.constant(0.0)
                               : mean_dirac_gaussian_nll(tape, fo.s1_mean, fo.s1_var,
                                                         rows, std::move(targets));
  }

  // ROI classification over listed positives and (possibly subsampled)
  // negatives
  {
    std::vector<int> rows;
    std::vector<double> targets;
    const int arity = n + 1;
    for (int i : m_roi.positives) {
      rows.push_back(i);
      std::vector<double> oh(arity, 0.0);
      oh[scene.labels[m_roi.assignment[i]] - 1] = 1.0;
      targets.insert(targets.end(), oh.begin(), oh.end());
    }
    for (int i : m_roi.negatives) {
      rows.push_back(i);
      std::vector<double> oh(arity, 0.0);
      oh[arity - 1] = 1.0;
      targets.insert(targets.end(), oh.begin(), oh.end());
    }
    lb.n_cls_roi = static_cast<int>(rows.size());
    lb.cls_roi = rows.empty() ? tape.constant(0.0)
                              : mean_cross_entropy(tape, fo.s2_cls, rows,
                                                   std::move(targets), arity);
  }

  // ROI bbox over positives
  {
    std::vector<int> rows = m_roi.positives;
    std::vector<double> targets;
    for (int i : rows) {
      const Box& gt = scene.boxes[m_roi.assignment[i]];
      const auto t = encode_deltas(gt, fo.proposals[i]);
      targets.insert(targets.end(), t.begin(), t.end());
    }
    lb.n_pos_roi = static_cast<int>(rows.size());
    lb.bbox_roi = rows.empty() ? tape.constant(0.0)
                               : mean_dirac_gaussian_nll(tape, fo.s2_mean, fo.s2_var,
                                                         rows, std::move(targets));
  }

  lb.total = tape.add(tape.add(lb.cls_rpn, lb.cls_roi),
                      tape.add(lb.bbox_rpn, lb.bbox_roi));
  return lb;
}

Tensor consistency_cls_loss(Tape& tape, const CategoricalDist& teacher,
                            Tensor student_probs, Head head, double tau_cls,
                            const EflConfig& efl) {
  CategoricalDist target = sharpen_dist(teacher, tau_cls);
  double norm;
  if (head == Head::kRpn) {
    target = merge_foreground(target);
    norm = efl.norms.rpn;
  } else {
    norm = efl.norms.cls;
  }
  const double e = categorical_entropy(target);
  if (e > norm + 1e-12) ++efl_clamp_count();
  const double w = efl_weight(e, norm, efl.lambda);

  const int arity = static_cast<int>(target.probs.size());
  if (student_probs.size() != arity) {
    throw std::invalid_argument("student distribution arity mismatch");
  }
  Tensor t = tape.constant({arity}, target.probs);
  Tensor flat = tape.reshape(student_probs, {arity});
  Tensor ce = tape.scalar_mul(
      tape.sum(tape.mul(t, tape.log(tape.add_scalar(flat, kProbEps)))), -1.0);
  return tape.scalar_mul(ce, w);
}

Tensor consistency_bbox_loss(Tape& tape, Tensor teacher_mean4,
                             const std::array<double, 4>& teacher_var,
                             Tensor student_mean4, Tensor student_var4,
                             double tau_bbox, const EflConfig& efl) {
  if (tau_bbox <= 0.0 || tau_bbox > 1.0) {
    throw std::invalid_argument("tau_bbox must lie in (0,1]");
  }
  for (double v : student_var4.value()) {
    if (v <= 0.0 || v > 1.0) throw std::invalid_argument("student variance out of (0,1]");
  }
  Tensor tm = tape.reshape(teacher_mean4, {4});
  Tensor sm = tape.reshape(student_mean4, {4});
  Tensor sv = tape.reshape(student_var4, {4});

  std::array<double, 4> sharp{};
  std::array<double, 4> weights{};
  for (int c = 0; c < 4; ++c) {
    if (teacher_var[c] <= 0.0 || teacher_var[c] >= 1.0) {
      throw std::invalid_argument("teacher variance out of (0,1)");
    }
    sharp[c] = teacher_var[c] * tau_bbox;
    double e = gaussian_entropy(sharp[c]);
    if (e > efl.norms.loc + 1e-12) ++efl_clamp_count();
    e = std::clamp(e, 0.0, efl.norms.loc);
    weights[c] = efl_weight(e, efl.norms.loc, efl.lambda);
  }
  Tensor v1 = tape.constant({4}, {sharp[0], sharp[1], sharp[2], sharp[3]});
  Tensor d = tape.sub(tm, sm);
  Tensor per = tape.scalar_mul(
      tape.add(tape.add(tape.log(sv),
                        tape.mul(tape.add(v1, tape.square(d)),
                                 tape.reciprocal_pos(sv))),
               tape.constant(kLog2Pi)),
      0.5);
  Tensor w = tape.constant({4}, {weights[0], weights[1], weights[2], weights[3]});
  return tape.sum(tape.mul(w, per));
}

Tensor consistency_bbox_loss(Tape& tape, const BoxDist& teacher,
                             Tensor student_mean4, Tensor student_var4,
                             double tau_bbox, const EflConfig& efl) {
  Tensor tm = tape.constant({4}, {teacher.coords[0].mean, teacher.coords[1].mean,
                                  teacher.coords[2].mean, teacher.coords[3].mean});
  std::array<double, 4> tv{teacher.coords[0].variance, teacher.coords[1].variance,
                           teacher.coords[2].variance, teacher.coords[3].variance};
  return consistency_bbox_loss(tape, tm, tv, student_mean4, student_var4,
                               tau_bbox, efl);
}

Tensor total_loss(Tape& tape, Tensor source_total, Tensor target_total,
                  double lambda_t, bool source_free) {
  if (lambda_t < 0.0) throw std::invalid_argument("lambda_t must be >= 0");
  Tensor t = tape.scalar_mul(target_total, lambda_t);
  if (source_free) return t;
  return tape.add(source_total, t);
}

}  // namespace ugdet
