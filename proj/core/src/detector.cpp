#include "ugdet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace ugdet {

Shape DetectorParams::segment_shape(int seg) const {
  const int d = cfg.feat_dim, h = cfg.hidden, a = cfg.num_anchors;
  const int k = cfg.num_classes + 1;
  switch (seg) {
    case kS1W1: return {d, h};
    case kS1B1: return {h};
    case kS1Wc: return {h, a * 2};
    case kS1Bc: return {a * 2};
    case kS1Wm: return {h, a * 4};
    case kS1Bm: return {a * 4};
    case kS1Wv: return {h, a * 4};
    case kS1Bv: return {a * 4};
    case kS2W1: return {5 * d + 2, h};
    case kS2B1: return {h};
    case kS2Wc: return {h, k};
    case kS2Bc: return {k};
    case kS2Wm: return {h, 4};
    case kS2Bm: return {4};
    case kS2Wv: return {h, 4};
    case kS2Bv: return {4};
    case kAnchorW: return {a};
    case kAnchorH: return {a};
    default: throw std::invalid_argument("bad segment");
  }
}

void DetectorParams::compute_layout() {
  offsets_[0] = 0;
  for (int s = 0; s < kNumSegments; ++s) {
    int n = 1;
    for (int d : segment_shape(s)) n *= d;
    offsets_[s + 1] = offsets_[s] + n;
  }
}

DetectorParams DetectorParams::init(const DetectorConfig& cfg, uint64_t seed) {
  if (static_cast<int>(cfg.anchor_init.size()) != cfg.num_anchors) {
    throw std::invalid_argument("anchor_init size must equal num_anchors");
  }
  DetectorParams p;
  p.cfg = cfg;
  p.compute_layout();
  p.flat.assign(p.offsets_[kNumSegments], 0.0);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  auto init_weight = [&](int seg, int fan_in) {
    auto s = p.segment(seg);
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : s) v = scale * n01(rng);
  };
  init_weight(kS1W1, cfg.feat_dim);
  init_weight(kS1Wc, cfg.hidden);
  init_weight(kS1Wm, cfg.hidden);
  init_weight(kS1Wv, cfg.hidden);
  init_weight(kS2W1, 5 * cfg.feat_dim + 2);
  init_weight(kS2Wc, cfg.hidden);
  init_weight(kS2Wm, cfg.hidden);
  init_weight(kS2Wv, cfg.hidden);
  // raw-variance bias below zero starts sigma^2 around 0.27
  for (double& v : p.segment(kS1Bv)) v = -1.0;
  for (double& v : p.segment(kS2Bv)) v = -1.0;
  for (int k = 0; k < cfg.num_anchors; ++k) {
    p.segment(kAnchorW)[k] = cfg.anchor_init[k];
    p.segment(kAnchorH)[k] = cfg.anchor_init[k];
  }
  return p;
}

TapeParams lift(Tape& tape, const DetectorParams& p, bool trainable) {
  TapeParams tp;
  tp.cfg = p.cfg;
  for (int s = 0; s < DetectorParams::kNumSegments; ++s) {
    std::vector<double> data(p.segment(s).begin(), p.segment(s).end());
    tp.seg[s] = trainable ? tape.leaf(p.segment_shape(s), std::move(data))
                          : tape.constant(p.segment_shape(s), std::move(data));
  }
  return tp;
}

std::vector<double> read_grads(const Tape& tape, const TapeParams& tp,
                               const DetectorParams& p) {
  std::vector<double> g(p.flat.size(), 0.0);
  for (int s = 0; s < DetectorParams::kNumSegments; ++s) {
    const auto& gs = tape.grad(tp.seg[s]);
    std::copy(gs.begin(), gs.end(), g.begin() + p.segment_offset(s));
  }
  return g;
}

namespace {

constexpr double kVarFloor = 0.02;

// Region descriptor for one proposal: average of cell features inside
// the box (nearest-cell fallback when empty), averages over one-cell
// outside strips on each side (zeros off-grid), and normalized extents.
// The strips expose boundary contrast for the regression head.
std::vector<double> pool_features(const Scene& scene, const Box& b) {
  const int d = scene.feat_dim;
  std::vector<double> out(5 * d + 2, 0.0);

  // area-weighted average so the descriptor varies continuously with
  // sub-cell box shifts
  auto region_avg = [&](double x1, double y1, double x2, double y2, int off) {
    const int c1 = std::clamp(static_cast<int>(std::floor(x1)), 0, scene.grid);
    const int c2 = std::clamp(static_cast<int>(std::ceil(x2)), 0, scene.grid);
    const int r1 = std::clamp(static_cast<int>(std::floor(y1)), 0, scene.grid);
    const int r2 = std::clamp(static_cast<int>(std::ceil(y2)), 0, scene.grid);
    double wsum = 0.0;
    for (int r = r1; r < r2; ++r) {
      for (int c = c1; c < c2; ++c) {
        const double ox = std::min(x2, c + 1.0) - std::max(x1, static_cast<double>(c));
        const double oy = std::min(y2, r + 1.0) - std::max(y1, static_cast<double>(r));
        if (ox <= 0.0 || oy <= 0.0) continue;
        const double w = ox * oy;
        for (int ch = 0; ch < d; ++ch) out[off + ch] += w * scene.at(r, c, ch);
        wsum += w;
      }
    }
    if (wsum > 0.0) {
      for (int ch = 0; ch < d; ++ch) out[off + ch] /= wsum;
    }
    return wsum;
  };

  if (region_avg(b.x1(), b.y1(), b.x2(), b.y2(), 0) <= 0.0) {
    const int r = std::clamp(static_cast<int>(b.cy), 0, scene.grid - 1);
    const int c = std::clamp(static_cast<int>(b.cx), 0, scene.grid - 1);
    for (int ch = 0; ch < d; ++ch) out[ch] = scene.at(r, c, ch);
  }
  region_avg(b.x1() - 1.0, b.y1(), b.x1(), b.y2(), d);          // left strip
  region_avg(b.x2(), b.y1(), b.x2() + 1.0, b.y2(), 2 * d);      // right
  region_avg(b.x1(), b.y1() - 1.0, b.x2(), b.y1(), 3 * d);      // top
  region_avg(b.x1(), b.y2(), b.x2(), b.y2() + 1.0, 4 * d);      // bottom
  out[5 * d] = b.w / scene.grid;
  out[5 * d + 1] = b.h / scene.grid;
  return out;
}

}  // namespace

ForwardOut forward(Tape& tape, const TapeParams& params, const Scene& scene) {
  const DetectorConfig& cfg = params.cfg;
  if (scene.grid != cfg.grid || scene.feat_dim != cfg.feat_dim) {
    throw std::invalid_argument("scene does not match configured extents");
  }
  using P = DetectorParams;
  const int cells = cfg.grid * cfg.grid;
  const int a = cfg.num_anchors;
  const int n1 = cells * a;

  ForwardOut out;
  Tensor feats = tape.constant({cells, cfg.feat_dim}, scene.features);
  Tensor h1 = tape.tanh(tape.add(tape.matmul(feats, params.seg[P::kS1W1]),
                                 params.seg[P::kS1B1]));
  // column layout is anchor-major, so [cells, A*f] reinterprets as
  // [cells*A, f] without movement
  Tensor logits1 = tape.reshape(
      tape.add(tape.matmul(h1, params.seg[P::kS1Wc]), params.seg[P::kS1Bc]),
      {n1, 2});
  out.s1_cls = tape.softmax_t(logits1, 1.0);
  out.s1_mean = tape.reshape(
      tape.add(tape.matmul(h1, params.seg[P::kS1Wm]), params.seg[P::kS1Bm]),
      {n1, 4});
  // floored sigmoid keeps variances in (kVarFloor, 1), bounding the
  // location NLL from below and preventing precision collapse
  out.s1_var = tape.add_scalar(
      tape.scalar_mul(tape.sigmoid(tape.reshape(
                          tape.add(tape.matmul(h1, params.seg[P::kS1Wv]),
                                   params.seg[P::kS1Bv]),
                          {n1, 4})),
                      1.0 - kVarFloor),
      kVarFloor);

  const auto& aw = params.anchor_w().value();
  const auto& ah = params.anchor_h().value();
  out.anchor_boxes.reserve(n1);
  out.anchor_shape_idx.reserve(n1);
  for (int cell = 0; cell < cells; ++cell) {
    const double cy = cell / cfg.grid + 0.5;
    const double cx = cell % cfg.grid + 0.5;
    for (int k = 0; k < a; ++k) {
      out.anchor_boxes.push_back(Box{cx, cy, aw[k], ah[k]});
      out.anchor_shape_idx.push_back(k);
    }
  }

  // Proposal selection on values: decode stage-1 means, NMS, top-P.
  const auto& mean_v = out.s1_mean.value();
  const auto& cls_v = out.s1_cls.value();
  std::vector<Box> decoded(n1);
  std::vector<double> scores(n1);
  for (int i = 0; i < n1; ++i) {
    decoded[i] = decode_deltas(
        {mean_v[i * 4], mean_v[i * 4 + 1], mean_v[i * 4 + 2], mean_v[i * 4 + 3]},
        out.anchor_boxes[i], cfg.grid);
    scores[i] = cls_v[i * 2];  // foreground
  }
  std::vector<int> kept = nms(decoded, scores, cfg.proposal_nms_iou);
  const int p_count = std::min(cfg.proposals, n1);
  std::vector<int> chosen(kept.begin(),
                          kept.begin() + std::min<size_t>(kept.size(), p_count));
  if (static_cast<int>(chosen.size()) < p_count) {
    std::vector<int> order(n1);
    for (int i = 0; i < n1; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return scores[x] > scores[y]; });
    std::vector<char> in(n1, 0);
    for (int i : chosen) in[i] = 1;
    for (int i : order) {
      if (static_cast<int>(chosen.size()) >= p_count) break;
      if (!in[i]) {
        chosen.push_back(i);
        in[i] = 1;
      }
    }
  }
  std::vector<double> pooled;
  pooled.reserve(static_cast<size_t>(p_count) * (5 * cfg.feat_dim + 2));
  for (int i : chosen) {
    out.proposals.push_back(decoded[i]);
    const auto f = pool_features(scene, decoded[i]);
    pooled.insert(pooled.end(), f.begin(), f.end());
  }

  Tensor pf = tape.constant({p_count, 5 * cfg.feat_dim + 2}, std::move(pooled));
  Tensor h2 = tape.tanh(tape.add(tape.matmul(pf, params.seg[P::kS2W1]),
                                 params.seg[P::kS2B1]));
  out.s2_cls = tape.softmax_t(
      tape.add(tape.matmul(h2, params.seg[P::kS2Wc]), params.seg[P::kS2Bc]), 1.0);
  out.s2_mean = tape.add(tape.matmul(h2, params.seg[P::kS2Wm]), params.seg[P::kS2Bm]);
  out.s2_var = tape.add_scalar(
      tape.scalar_mul(tape.sigmoid(tape.add(tape.matmul(h2, params.seg[P::kS2Wv]),
                                            params.seg[P::kS2Bv])),
                      1.0 - kVarFloor),
      kVarFloor);
  return out;
}

std::vector<Detection> detect(const DetectorParams& params, const Scene& scene,
                              double nms_iou) {
  Tape tape;  // scratch, discarded; nothing trainable recorded
  TapeParams tp = lift(tape, params, /*trainable=*/false);
  ForwardOut fo = forward(tape, tp, scene);

  const int p_count = static_cast<int>(fo.proposals.size());
  const int k = params.cfg.num_classes + 1;
  const auto& cls_v = fo.s2_cls.value();
  const auto& mean_v = fo.s2_mean.value();
  const auto& var_v = fo.s2_var.value();

  std::vector<Detection> dets(p_count);
  std::vector<Box> boxes(p_count);
  std::vector<double> scores(p_count);
  for (int i = 0; i < p_count; ++i) {
    Detection& d = dets[i];
    d.proposal = fo.proposals[i];
    d.cls.probs.assign(cls_v.begin() + i * k, cls_v.begin() + (i + 1) * k);
    for (int c = 0; c < 4; ++c) {
      d.delta_mean[c] = mean_v[i * 4 + c];
      d.delta_var[c] = var_v[i * 4 + c];
    }
    d.box = decode_deltas(d.delta_mean, d.proposal, params.cfg.grid);
    d.score = 0.0;
    for (int c = 0; c < k - 1; ++c) {
      if (d.cls.probs[c] > d.score) {
        d.score = d.cls.probs[c];
        d.label = c + 1;
      }
    }
    boxes[i] = d.box;
    scores[i] = d.score;
  }
  std::vector<Detection> out;
  for (int i : nms(boxes, scores, nms_iou)) out.push_back(dets[i]);
  return out;
}

std::vector<PseudoBox> infer_pseudo_boxes(const DetectorParams& teacher,
                                          const Scene& weak_scene,
                                          double nms_iou) {
  return detect(teacher, weak_scene, nms_iou);
}

}  // namespace ugdet
