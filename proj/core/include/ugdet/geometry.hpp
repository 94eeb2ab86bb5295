#pragma once

#include <array>
#include <vector>

namespace ugdet {

// Axis-aligned box in scene units, center + extents.
struct Box {
  double cx = 0.0, cy = 0.0, w = 1.0, h = 1.0;

  double x1() const { return cx - 0.5 * w; }
  double y1() const { return cy - 0.5 * h; }
  double x2() const { return cx + 0.5 * w; }
  double y2() const { return cy + 0.5 * h; }
  double area() const { return w * h; }

  static Box from_corners(double x1, double y1, double x2, double y2);
};

inline constexpr double kMinBoxExtent = 1e-3;

double iou(const Box& a, const Box& b);

// Standard delta parameterization:
//   t_x = (cx - cx_r)/w_r, t_y = (cy - cy_r)/h_r,
//   t_w = log(w/w_r),      t_h = log(h/h_r)
std::array<double, 4> encode_deltas(const Box& gt, const Box& ref);

// Inverse of encode_deltas, then clamped into [0, grid_extent] with
// extents floored at kMinBoxExtent. Pass grid_extent <= 0 to skip clamping.
Box decode_deltas(const std::array<double, 4>& t, const Box& ref,
                  double grid_extent);

// Clamp a box into scene bounds, flooring extents.
Box clamp_box(const Box& b, double grid_extent);

// Greedy descending-score suppression. Returns indices of kept boxes in
// descending score order; ties broken by input order.
std::vector<int> nms(const std::vector<Box>& boxes,
                     const std::vector<double>& scores, double iou_thresh);

// Per-candidate assignment against a target set.
struct MatchResult {
  // target index for positives, -1 negative, -2 ignored
  std::vector<int> assignment;
  std::vector<int> positives;  // candidate indices, ascending
  std::vector<int> negatives;
};

// Positive iff max-IoU target >= pos_thresh (argmax target, ties to the
// lowest target index); negative iff max-IoU < neg_thresh; else ignored.
// Each target additionally claims its single highest-IoU candidate.
MatchResult match_targets(const std::vector<Box>& candidates,
                          const std::vector<Box>& targets, double pos_thresh,
                          double neg_thresh);

}  // namespace ugdet
