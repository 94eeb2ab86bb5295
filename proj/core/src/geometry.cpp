#include "ugdet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ugdet {

Box Box::from_corners(double x1, double y1, double x2, double y2) {
  return Box{0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1};
}

double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  const double iy = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  const double inter = ix * iy;
  if (inter <= 0.0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

std::array<double, 4> encode_deltas(const Box& gt, const Box& ref) {
  if (ref.w <= 0.0 || ref.h <= 0.0 || gt.w <= 0.0 || gt.h <= 0.0) {
    throw std::invalid_argument("non-positive box extents");
  }
  return {(gt.cx - ref.cx) / ref.w, (gt.cy - ref.cy) / ref.h,
          std::log(gt.w / ref.w), std::log(gt.h / ref.h)};
}

Box clamp_box(const Box& b, double grid_extent) {
  Box r = b;
  r.w = std::max(r.w, kMinBoxExtent);
  r.h = std::max(r.h, kMinBoxExtent);
  if (grid_extent > 0.0) {
    r.w = std::min(r.w, grid_extent);
    r.h = std::min(r.h, grid_extent);
    r.cx = std::clamp(r.cx, 0.5 * r.w, grid_extent - 0.5 * r.w);
    r.cy = std::clamp(r.cy, 0.5 * r.h, grid_extent - 0.5 * r.h);
  }
  return r;
}

Box decode_deltas(const std::array<double, 4>& t, const Box& ref,
                  double grid_extent) {
  if (ref.w <= 0.0 || ref.h <= 0.0) {
    throw std::invalid_argument("non-positive reference extents");
  }
  Box b;
  b.cx = ref.cx + t[0] * ref.w;
  b.cy = ref.cy + t[1] * ref.h;
  b.w = ref.w * std::exp(t[2]);
  b.h = ref.h * std::exp(t[3]);
  if (grid_extent > 0.0) b = clamp_box(b, grid_extent);
  return b;
}

std::vector<int> nms(const std::vector<Box>& boxes,
                     const std::vector<double>& scores, double iou_thresh) {
  if (boxes.size() != scores.size()) throw std::invalid_argument("nms size mismatch");
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  std::vector<int> kept;
  std::vector<char> removed(boxes.size(), 0);
  for (int i : order) {
    if (removed[i]) continue;
    kept.push_back(i);
    for (int j : order) {
      if (!removed[j] && j != i && iou(boxes[i], boxes[j]) > iou_thresh) {
        removed[j] = 1;
      }
    }
  }
  return kept;
}

MatchResult match_targets(const std::vector<Box>& candidates,
                          const std::vector<Box>& targets, double pos_thresh,
                          double neg_thresh) {
  if (pos_thresh < neg_thresh) throw std::invalid_argument("pos_thresh < neg_thresh");
  MatchResult m;
  m.assignment.assign(candidates.size(), -1);
  if (candidates.empty()) return m;
  std::vector<int> best_cand(targets.size(), -1);
  std::vector<double> best_cand_iou(targets.size(), 0.0);
  for (size_t c = 0; c < candidates.size(); ++c) {
    double best = 0.0;
    int best_t = -1;
    for (size_t t = 0; t < targets.size(); ++t) {
      const double v = iou(candidates[c], targets[t]);
      if (v > best) {
        best = v;
        best_t = static_cast<int>(t);
      }
      if (v > best_cand_iou[t]) {
        best_cand_iou[t] = v;
        best_cand[t] = static_cast<int>(c);
      }
    }
    if (best >= pos_thresh) {
      m.assignment[c] = best_t;
    } else if (best >= neg_thresh) {
      m.assignment[c] = -2;
    }
  }
  // Each target claims its highest-IoU candidate as positive.
  for (size_t t = 0; t < targets.size(); ++t) {
    if (best_cand[t] >= 0 && best_cand_iou[t] > 0.0) {
      m.assignment[best_cand[t]] = static_cast<int>(t);
    }
  }
  for (size_t c = 0; c < candidates.size(); ++c) {
    if (m.assignment[c] >= 0) m.positives.push_back(static_cast<int>(c));
    else if (m.assignment[c] == -1) m.negatives.push_back(static_cast<int>(c));
  }
  return m;
}

}  // namespace ugdet
