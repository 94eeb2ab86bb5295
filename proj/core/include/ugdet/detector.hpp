#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "ugdet/geometry.hpp"
#include "ugdet/probdist.hpp"
#include "ugdet/synthdata.hpp"
#include "ugdet/tensor.hpp"

namespace ugdet {

struct DetectorConfig {
  int grid = 16;
  int feat_dim = 8;
  int num_classes = 3;   // foreground classes n
  int num_anchors = 3;   // A, one anchor of each shape per cell
  int hidden = 16;
  int proposals = 32;    // P, stage-2 batch
  double rpn_pos_thresh = 0.5;
  double rpn_neg_thresh = 0.3;
  double roi_pos_thresh = 0.5;
  double proposal_nms_iou = 0.5;
  std::vector<double> anchor_init = {1.5, 2.0, 2.5};  // square w=h seeds
};

// All learnable weights, stored as one flat vector with a named segment
// layout. Both heads are one-hidden-layer maps; anchor shapes are
// trainable parameters alongside the head weights.
class DetectorParams {
 public:
  enum Segment {
    kS1W1, kS1B1, kS1Wc, kS1Bc, kS1Wm, kS1Bm, kS1Wv, kS1Bv,
    kS2W1, kS2B1, kS2Wc, kS2Bc, kS2Wm, kS2Bm, kS2Wv, kS2Bv,
    kAnchorW, kAnchorH, kNumSegments
  };

  DetectorConfig cfg;
  std::vector<double> flat;

  static DetectorParams init(const DetectorConfig& cfg, uint64_t seed);

  int segment_offset(int seg) const { return offsets_[seg]; }
  int segment_size(int seg) const { return offsets_[seg + 1] - offsets_[seg]; }
  Shape segment_shape(int seg) const;
  std::span<double> segment(int seg) {
    return {flat.data() + offsets_[seg], static_cast<size_t>(segment_size(seg))};
  }
  std::span<const double> segment(int seg) const {
    return {flat.data() + offsets_[seg], static_cast<size_t>(segment_size(seg))};
  }
  std::span<const double> anchor_widths() const { return segment(kAnchorW); }
  std::span<const double> anchor_heights() const { return segment(kAnchorH); }

 private:
  void compute_layout();
  std::array<int, kNumSegments + 1> offsets_{};
};

// Per-step view of DetectorParams on a tape. trainable=true registers
// leaves (gradient targets); false registers constants.
struct TapeParams {
  std::array<Tensor, DetectorParams::kNumSegments> seg;
  DetectorConfig cfg;
  Tensor anchor_w() const { return seg[DetectorParams::kAnchorW]; }
  Tensor anchor_h() const { return seg[DetectorParams::kAnchorH]; }
};

TapeParams lift(Tape& tape, const DetectorParams& p, bool trainable);

// Gradients read back in the flat layout, after tape.backward().
std::vector<double> read_grads(const Tape& tape, const TapeParams& tp,
                               const DetectorParams& p);

struct ForwardOut {
  // stage 1: one row per anchor, N1 = grid*grid*A
  Tensor s1_cls;   // [N1, 2] probabilities (foreground, background)
  Tensor s1_mean;  // [N1, 4] delta means
  Tensor s1_var;   // [N1, 4] sigmoid-squashed variances, each in (0,1)
  std::vector<Box> anchor_boxes;      // N1 reference boxes (values)
  std::vector<int> anchor_shape_idx;  // N1 -> anchor shape k

  // stage 2: exactly P proposals
  std::vector<Box> proposals;  // reference boxes (values)
  Tensor s2_cls;   // [P, n+1] probabilities, background last
  Tensor s2_mean;  // [P, 4]
  Tensor s2_var;   // [P, 4]
};

ForwardOut forward(Tape& tape, const TapeParams& params, const Scene& scene);

// A teacher-emitted pseudo box, also the evaluation detection record.
struct Detection {
  Box box;                            // decoded mean, scene coordinates
  Box proposal;                       // stage-2 reference
  CategoricalDist cls;                // full (n+1)-way distribution
  std::array<double, 4> delta_mean;   // wrt proposal
  std::array<double, 4> delta_var;    // delta-space variances in (0,1)
  double score = 0.0;                 // max foreground probability
  int label = 1;                      // argmax foreground class, 1..n
};

using PseudoBox = Detection;

// Full inference with class-agnostic NMS; every survivor is returned.
std::vector<Detection> detect(const DetectorParams& params, const Scene& scene,
                              double nms_iou);

// Threshold-free pseudo labeling on a weakly augmented scene: NMS only,
// no confidence filtering. Never records gradients.
std::vector<PseudoBox> infer_pseudo_boxes(const DetectorParams& teacher,
                                          const Scene& weak_scene,
                                          double nms_iou);

}  // namespace ugdet
