#include "ugdet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include "ugdet/probdist.hpp"

namespace ugdet {

double average_precision(std::vector<ScoredBox> dets,
                         const std::vector<std::vector<Box>>& gts_per_scene,
                         double iou_thresh) {
  int total_gt = 0;
  for (const auto& g : gts_per_scene) total_gt += static_cast<int>(g.size());
  if (total_gt == 0) return std::numeric_limits<double>::quiet_NaN();
  if (dets.empty()) return 0.0;

  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return dets[a].score > dets[b].score;
  });

  std::vector<std::vector<char>> used(gts_per_scene.size());
  for (size_t s = 0; s < gts_per_scene.size(); ++s) {
    used[s].assign(gts_per_scene[s].size(), 0);
  }

  std::vector<int> is_tp;
  is_tp.reserve(dets.size());
  for (int idx : order) {
    const ScoredBox& d = dets[idx];
    if (d.scene < 0 || d.scene >= static_cast<int>(gts_per_scene.size())) {
      is_tp.push_back(0);
      continue;
    }
    const auto& gts = gts_per_scene[d.scene];
    double best = iou_thresh;
    int best_g = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (used[d.scene][g]) continue;
      const double v = iou(d.box, gts[g]);
      if (v >= best) {
        best = v;
        best_g = static_cast<int>(g);
      }
    }
    if (best_g >= 0) {
      used[d.scene][best_g] = 1;
      is_tp.push_back(1);
    } else {
      is_tp.push_back(0);
    }
  }

  // precision/recall points, then all-point interpolation (running max
  // of precision from the right)
  std::vector<double> precision(is_tp.size()), recall(is_tp.size());
  int tp = 0;
  for (size_t i = 0; i < is_tp.size(); ++i) {
    tp += is_tp[i];
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / total_gt;
  }
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i) {
    precision[i] = std::max(precision[i], precision[i + 1]);
  }
  double ap = 0.0;
  double prev_r = 0.0;
  for (size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_r) * precision[i];
    prev_r = recall[i];
  }
  return ap;
}

double mean_ap(const std::vector<std::vector<ScoredBox>>& dets_per_class,
               const std::vector<std::vector<std::vector<Box>>>& gts_per_class,
               double iou_thresh) {
  if (dets_per_class.size() != gts_per_class.size()) {
    throw std::invalid_argument("per-class size mismatch");
  }
  double acc = 0.0;
  int classes = 0;
  for (size_t c = 0; c < dets_per_class.size(); ++c) {
    const double ap = average_precision(dets_per_class[c], gts_per_class[c], iou_thresh);
    if (!std::isnan(ap)) {
      acc += ap;
      ++classes;
    }
  }
  if (classes == 0) throw std::invalid_argument("no class has ground truth");
  return acc / classes;
}

EvalReport evaluate(const DetectorParams& params,
                    const std::vector<Scene>& scenes, double nms_iou,
                    double iou_thresh) {
  const int n = params.cfg.num_classes;
  EvalReport rep;
  std::vector<std::vector<ScoredBox>> dets_per_class(n);
  std::vector<std::vector<std::vector<Box>>> gts_per_class(
      n, std::vector<std::vector<Box>>(scenes.size()));

  double cat_ent = 0.0, box_ent = 0.0;
  int det_count = 0;

  // size bins: quartiles of all ground-truth areas in this run
  std::vector<double> areas;
  for (const Scene& s : scenes)
    for (const Box& b : s.boxes) areas.push_back(b.area());
  std::vector<double> sorted_areas = areas;
  std::sort(sorted_areas.begin(), sorted_areas.end());
  auto area_bin = [&](double a) {
    if (sorted_areas.empty()) return 0;
    int lo = static_cast<int>(std::lower_bound(sorted_areas.begin(),
                                               sorted_areas.end(), a) -
                              sorted_areas.begin());
    int bin = (lo * 4) / std::max<int>(1, static_cast<int>(sorted_areas.size()));
    return std::min(bin, 3);
  };

  for (size_t si = 0; si < scenes.size(); ++si) {
    const Scene& scene = scenes[si];
    for (size_t g = 0; g < scene.boxes.size(); ++g) {
      gts_per_class[scene.labels[g] - 1][si].push_back(scene.boxes[g]);
    }
    const auto dets = detect(params, scene, nms_iou);
    std::vector<char> gt_used(scene.boxes.size(), 0);
    for (const Detection& d : dets) {
      dets_per_class[d.label - 1].push_back(
          ScoredBox{d.score, d.box, static_cast<int>(si)});
      cat_ent += categorical_entropy(d.cls);
      double be = 0.0;
      for (double v : d.delta_var) be += gaussian_entropy(v);
      box_ent += be / 4.0;
      ++det_count;

      // TP/FP at class-agnostic IoU for the count summary
      double best = iou_thresh;
      int best_g = -1;
      for (size_t g = 0; g < scene.boxes.size(); ++g) {
        if (gt_used[g] || scene.labels[g] != d.label) continue;
        const double v = iou(d.box, scene.boxes[g]);
        if (v >= best) {
          best = v;
          best_g = static_cast<int>(g);
        }
      }
      if (best_g >= 0) {
        gt_used[best_g] = 1;
        ++rep.tp;
        ++rep.size_bin_tp[area_bin(scene.boxes[best_g].area())];
      } else {
        ++rep.fp;
      }
    }
    for (size_t g = 0; g < scene.boxes.size(); ++g) {
      if (!gt_used[g]) {
        ++rep.fn;
        ++rep.size_bin_fn[area_bin(scene.boxes[g].area())];
      }
    }
  }

  rep.per_class_ap.resize(n);
  double acc = 0.0;
  int classes = 0;
  for (int c = 0; c < n; ++c) {
    rep.per_class_ap[c] = average_precision(dets_per_class[c], gts_per_class[c],
                                            iou_thresh);
    if (!std::isnan(rep.per_class_ap[c])) {
      acc += rep.per_class_ap[c];
      ++classes;
    }
  }
  rep.map = classes > 0 ? acc / classes : 0.0;
  rep.mean_cat_entropy = det_count > 0 ? cat_ent / det_count : 0.0;
  rep.mean_box_entropy = det_count > 0 ? box_ent / det_count : 0.0;
  return rep;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * (i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) return 0.0;
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va <= 0.0 || vb <= 0.0) return 0.0;  // constant predictor
  return cov / std::sqrt(va * vb);
}

CalibrationReport sigma_iou_calibration(const DetectorParams& params,
                                        const std::vector<Scene>& scenes,
                                        double nms_iou, int bins) {
  std::vector<double> vars, scores, ious;
  for (const Scene& scene : scenes) {
    for (const Detection& d : detect(params, scene, nms_iou)) {
      double best = 0.0;
      for (const Box& g : scene.boxes) best = std::max(best, iou(d.box, g));
      if (best <= 0.0) continue;
      double mv = 0.0;
      for (double v : d.delta_var) mv += v;
      vars.push_back(mv / 4.0);
      scores.push_back(d.score);
      ious.push_back(best);
    }
  }
  CalibrationReport rep;
  rep.sufficient = vars.size() >= 10;
  rep.corr_var_iou = spearman(vars, ious);
  rep.corr_score_iou = spearman(scores, ious);

  auto make_bins = [&](const std::vector<double>& pred) {
    std::vector<CalibrationBin> out(bins);
    std::vector<int> order(pred.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return pred[a] < pred[b]; });
    for (size_t i = 0; i < order.size(); ++i) {
      const int b = std::min<int>(static_cast<int>(i * bins / std::max<size_t>(1, order.size())),
                                  bins - 1);
      out[b].predictor_mean += pred[order[i]];
      out[b].iou_mean += ious[order[i]];
      ++out[b].count;
    }
    for (auto& bin : out) {
      if (bin.count > 0) {
        bin.predictor_mean /= bin.count;
        bin.iou_mean /= bin.count;
      }
    }
    return out;
  };
  if (!vars.empty()) {
    rep.by_variance = make_bins(vars);
    rep.by_score = make_bins(scores);
  }
  return rep;
}

}  // namespace ugdet
