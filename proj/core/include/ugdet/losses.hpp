#pragma once

#include <array>

#include "ugdet/detector.hpp"
#include "ugdet/probdist.hpp"
#include "ugdet/tensor.hpp"

namespace ugdet {

struct EflConfig {
  double lambda = 0.5;
  EntropyNorms norms;  // from efl_norms(n)
};

// Count of EFL weight clamps caused by E > E_norm. Should stay zero
// when the norms are configured correctly.
int& efl_clamp_count();

struct LossBreakdown {
  Tensor cls_rpn, cls_roi, bbox_rpn, bbox_roi, total;
  int n_pos_rpn = 0, n_pos_roi = 0;
  int n_cls_rpn = 0, n_cls_roi = 0;
};

// Supervised source loss: classification is cross-entropy against
// one-hot labels; bbox terms are per-positive sums over 4 coordinates
// of the Dirac-vs-Gaussian cross-entropy. Heads equally weighted.
// Heads with zero positives contribute 0 with count 0.
LossBreakdown supervised_loss(Tape& tape, const ForwardOut& fo,
                              const Scene& scene, const MatchResult& m_rpn,
                              const MatchResult& m_roi);

enum class Head { kRpn, kRoi };

// EFL-weighted consistency cross-entropy for one matched pair.
// The teacher target is sharpened, then merged for the RPN head; the
// weight is (1 - E/E_norm)^lambda of that target. student_probs is a
// valid probability tensor of the matching arity.
Tensor consistency_cls_loss(Tape& tape, const CategoricalDist& teacher,
                            Tensor student_probs, Head head, double tau_cls,
                            const EflConfig& efl);

// Per-coordinate EFL-weighted Gaussian-Gaussian cross-entropy, teacher
// variance sharpened by tau_bbox, summed over 4 coordinates.
Tensor consistency_bbox_loss(Tape& tape, const BoxDist& teacher,
                             Tensor student_mean4, Tensor student_var4,
                             double tau_bbox, const EflConfig& efl);

// Variant with teacher means living on the tape (used when the target
// encoding depends on trainable anchor shapes).
Tensor consistency_bbox_loss(Tape& tape, Tensor teacher_mean4,
                             const std::array<double, 4>& teacher_var,
                             Tensor student_mean4, Tensor student_var4,
                             double tau_bbox, const EflConfig& efl);

// L_S + lambda_t * L_T; the source term is dropped when source_free.
Tensor total_loss(Tape& tape, Tensor source_total, Tensor target_total,
                  double lambda_t, bool source_free);

}  // namespace ugdet
