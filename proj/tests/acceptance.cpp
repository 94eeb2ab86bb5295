// Acceptance gate: twelve go/no-go checks covering oracle agreement,
// gradient correctness, algebraic limits, the EMA contract, seeded
// desk-scale trend reproduction, robustness, calibration, source-free
// operation, and determinism. Prints one PASS/FAIL line per criterion
// and exits nonzero if any fail.
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ugdet/config.hpp"
#include "ugdet/eval.hpp"
#include "ugdet/gradcheck.hpp"
#include "ugdet/losses.hpp"
#include "ugdet/probdist.hpp"
#include "ugdet/quadrature.hpp"
#include "ugdet/trainer.hpp"

using namespace ugdet;

namespace {

int g_failures = 0;

double now_s() {
  using clock = std::chrono::steady_clock;
  static const clock::time_point t0 = clock::now();
  return std::chrono::duration<double>(clock::now() - t0).count();
}

void report(int id, bool pass, const std::string& detail, double elapsed) {
  std::printf("[%s] criterion %2d: %s (%.1fs)\n", pass ? "PASS" : "FAIL", id,
              detail.c_str(), elapsed);
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

// Pinned desk-scale recipe shared by the trend criteria.
struct Bench {
  DomainConfig src_cfg, tgt_cfg;
  std::vector<Scene> source, tgt_train, tgt_test;
};

Bench make_bench(const std::string& preset) {
  Bench b;
  std::tie(b.src_cfg, b.tgt_cfg) = domain_preset(preset, 16, 8, 3);
  b.source = generate_domain(b.src_cfg, 150, 7, DomainTag::kSource);
  b.tgt_train = generate_domain(b.tgt_cfg, 150, 8, DomainTag::kTarget);
  b.tgt_test = generate_domain(b.tgt_cfg, 40, 9, DomainTag::kTarget);
  return b;
}

TrainConfig trend_cfg(uint64_t seed) {
  TrainConfig c;
  c.pretrain_steps = 600;
  c.mutual_steps = 400;
  c.lr = 0.01;
  c.eval_every = 50;
  c.seed = seed;
  return c;
}

// Margins for criterion 5, pinned once from the reference runs below and
// set to roughly half the observed 3-seed mean teacher-mAP improvement:
//   weather   seeds {1,2,3}: +0.0805 +0.0812 +0.1956  (mean +0.119)
//   scale     seeds {1,2,3}: mean +0.071
//   camera    seeds {1,2,3}: mean +0.070
//   synthetic seeds {1,2,3}: mean +0.102
struct PresetMargin {
  const char* preset;
  double margin;
};
const PresetMargin kTrendMargins[] = {
    {"weather", 0.05}, {"scale", 0.03}, {"camera", 0.03}, {"synthetic", 0.05}};

}  // namespace

// 1. closed forms match quadrature; uniform entropy equals log(n+1)
static void criterion_1() {
  const double t0 = now_s();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> var(0.01, 1.0), mean(-3.0, 3.0);
  double worst = 0.0;
  for (int it = 0; it < 200; ++it) {
    const double m1 = mean(rng), m2 = mean(rng), v1 = var(rng), v2 = var(rng);
    worst = std::max(worst, std::abs(ce_gaussian_gaussian(m1, v1, m2, v2) -
                                     quad_ce_gaussian_gaussian(m1, v1, m2, v2)));
    worst = std::max(worst, std::abs(ce_dirac_gaussian(m1, m2, v2) -
                                     quad_ce_dirac_gaussian(m1, m2, v2)));
    worst = std::max(worst, std::abs(gaussian_entropy(v1) - quad_gaussian_entropy(v1)));
  }
  double worst_cat = 0.0;
  for (int n = 1; n <= 8; ++n) {
    worst_cat = std::max(worst_cat,
                         std::abs(categorical_entropy(CategoricalDist::uniform(n + 1)) -
                                  std::log(n + 1.0)));
  }
  const double dt = now_s() - t0;
  report(1, worst < 1e-6 && worst_cat < 1e-12 && dt < 10.0,
         fmt("formula oracles vs quadrature, max abs err %.2e; uniform entropy err %.2e",
             worst, worst_cat),
         dt);
}

// 2. central finite differences across every op and loss composition
static void criterion_2() {
  const double t0 = now_s();
  bool ok = true;
  double worst = 0.0;
  std::string bad;
  for (const auto& r : fd_op_suite(17, 20)) {
    worst = std::max(worst, r.max_rel_err);
    if (!r.pass) ok = false, bad += " " + r.name;
  }
  for (const auto& r : fd_loss_suite(29, 20)) {
    worst = std::max(worst, r.max_rel_err);
    if (!r.pass) ok = false, bad += " " + r.name;
  }
  const double dt = now_s() - t0;
  report(2, ok && dt < 60.0,
         fmt("finite-difference checks, max rel err %.2e%s%s", worst,
             bad.empty() ? "" : "; failed:", bad.c_str()),
         dt);
}

// 3. limit consistencies: tau=1 identities, lambda_efl=0, CE at equality
static void criterion_3() {
  const double t0 = now_s();
  bool ok = true;

  CategoricalDist d{{0.3, 0.45, 0.25}};
  auto same = sharpen_dist(d, 1.0);
  for (int i = 0; i < 3; ++i) ok &= std::abs(same.probs[i] - d.probs[i]) < 1e-15;
  GaussianCoord g{0.4, 0.37};
  ok &= sharpen_gaussian(g, 1.0).variance == g.variance;

  // tau_cls=1, lambda_efl=0: consistency loss is the plain cross entropy
  CategoricalDist teacher{{0.55, 0.25, 0.2}};
  Tape tape;
  Tensor student = tape.leaf({1, 3}, {0.4, 0.35, 0.25});
  Tensor l = consistency_cls_loss(tape, teacher, student, Head::kRoi, 1.0,
                                  EflConfig{0.0, efl_norms(2)});
  ok &= std::abs(l.scalar() -
                 categorical_cross_entropy(teacher, {{0.4, 0.35, 0.25}})) < 1e-9;

  // lambda=0 disables the entropy weight entirely
  ok &= efl_weight(0.31, 1.0, 0.0) == 1.0;

  // Gaussian-Gaussian CE at equality is the entropy, machine precision
  double worst = 0.0;
  for (double v : {0.02, 0.2, 0.7, 0.99}) {
    worst = std::max(worst, std::abs(ce_gaussian_gaussian(0.3, v, 0.3, v) -
                                     gaussian_entropy(v)));
  }
  ok &= worst < 1e-14;
  report(3, ok, fmt("limit consistencies, CE-at-equality err %.1e", worst),
         now_s() - t0);
}

// 4. EMA contract: exact convex combination; alpha=1 freezes the teacher;
//    teacher moves only through EMA during mutual learning
static void criterion_4() {
  const double t0 = now_s();
  bool ok = true;
  TrainConfig cfg;
  cfg.det.grid = 8;
  cfg.det.feat_dim = 4;
  cfg.det.hidden = 8;
  cfg.det.proposals = 12;
  cfg.pretrain_steps = 30;
  cfg.mutual_steps = 5;
  cfg.batch_size = 2;
  cfg.lr = 0.01;

  DetectorParams t = DetectorParams::init(cfg.det, 1);
  DetectorParams s = DetectorParams::init(cfg.det, 2);
  const DetectorParams t0p = t;
  DetectorParams frozen = t;
  ema_update(frozen, s, 1.0);
  ok &= frozen.flat == t0p.flat;
  ema_update(t, s, 0.9996);
  for (size_t i = 0; i < t.flat.size(); ++i) {
    const double want = 0.9996 * t0p.flat[i] + 0.0004 * s.flat[i];
    ok &= std::abs(t.flat[i] - want) <= 1e-12 * std::max(1.0, std::abs(want));
  }

  DomainConfig dc;
  dc.grid = 8;
  dc.feat_dim = 4;
  auto src = generate_domain(dc, 8, 3, DomainTag::kSource);
  auto tgt = generate_domain(dc, 8, 4, DomainTag::kTarget);
  TrainState st;
  st.student = pretrain(cfg, src);
  st.teacher = st.student;
  st.pretrained = st.student.flat;
  st.velocity.assign(st.student.flat.size(), 0.0);
  st.rng.seed(9);
  double worst = 0.0;
  for (int step = 0; step < 5; ++step) {
    DetectorParams before = st.teacher;
    mutual_learn_step(st, cfg, {src.data(), 2}, {tgt.data(), 2});
    for (size_t i = 0; i < st.teacher.flat.size(); ++i) {
      const double want = cfg.ema_alpha * before.flat[i] +
                          (1 - cfg.ema_alpha) * st.student.flat[i];
      worst = std::max(worst, std::abs(st.teacher.flat[i] - want));
    }
  }
  ok &= worst < 1e-12;  // any teacher gradient flow would break this
  report(4, ok, fmt("EMA contract, max teacher deviation from convex rule %.1e", worst),
         now_s() - t0);
}

// shared outputs reused by criteria 7 and 8
static std::vector<TrainState> g_weather_states;
static std::vector<TrainState> g_scale_states;

// 5. adaptation trend on all four presets, 3-seed mean above pinned margins
static void criterion_5() {
  const double t0 = now_s();
  bool ok = true;
  std::string detail = "teacher-over-source-only mean gains:";
  for (const auto& pm : kTrendMargins) {
    Bench b = make_bench(pm.preset);
    double mean_gain = 0.0;
    for (uint64_t seed : {1, 2, 3}) {
      TrainState st = adapt(trend_cfg(seed), b.source, b.tgt_train, b.tgt_test);
      mean_gain += st.history.back().teacher_map - st.source_only_map;
      if (std::string(pm.preset) == "weather") g_weather_states.push_back(std::move(st));
      else if (std::string(pm.preset) == "scale") g_scale_states.push_back(std::move(st));
    }
    mean_gain /= 3.0;
    ok &= mean_gain > 0.0 && mean_gain >= pm.margin;
    detail += fmt(" %s %+0.4f (margin %.2f)", pm.preset, mean_gain, pm.margin);
  }
  const double dt = now_s() - t0;
  report(5, ok && dt < 600.0, detail, dt);
}

// 6. strong-augmentation pretraining beats weak on the weather-like shift
static void criterion_6() {
  const double t0 = now_s();
  Bench b = make_bench("weather");
  double weak_mean = 0.0, strong_mean = 0.0;
  for (uint64_t seed : {2, 3, 8}) {
    TrainConfig weak = trend_cfg(seed);
    weak.pretrain_steps = 2500;
    TrainConfig strong = weak;
    strong.pretrain_strong_aug = true;
    weak_mean += evaluate(pretrain(weak, b.source), b.tgt_test).map;
    strong_mean += evaluate(pretrain(strong, b.source), b.tgt_test).map;
  }
  weak_mean /= 3.0;
  strong_mean /= 3.0;
  report(6, strong_mean >= weak_mean,
         fmt("strong-aug source-only mAP %.4f vs weak %.4f (3-seed mean)", strong_mean,
             weak_mean),
         now_s() - t0);
}

// 7. anchor adaptation helps under scale shift and anchors grow toward 2x
static void criterion_7() {
  const double t0 = now_s();
  Bench b = make_bench("scale");
  double aa_mean = 0.0, noaa_mean = 0.0;
  bool anchors_grew = true;
  for (const TrainState& st : g_scale_states) {
    aa_mean += st.history.back().teacher_map;
    const MetricRow& first = st.history.front();
    const MetricRow& last = st.history.back();
    anchors_grew &= 0.5 * (last.anchor_mean_w + last.anchor_mean_h) >
                    0.5 * (first.anchor_mean_w + first.anchor_mean_h);
  }
  aa_mean /= 3.0;
  for (uint64_t seed : {1, 2, 3}) {
    TrainConfig c = trend_cfg(seed);
    c.anchor_adapt = false;
    noaa_mean += adapt(c, b.source, b.tgt_train, b.tgt_test).history.back().teacher_map;
  }
  noaa_mean /= 3.0;
  report(7, aa_mean >= noaa_mean && anchors_grew,
         fmt("scale shift: with anchor adaptation mAP %.4f vs without %.4f; anchors %s",
             aa_mean, noaa_mean, anchors_grew ? "grew" : "did not grow"),
         now_s() - t0);
}

// 8. pseudo-box entropies decrease from first to final checkpoint
static void criterion_8() {
  const double t0 = now_s();
  double cat_first = 0.0, cat_last = 0.0, box_first = 0.0, box_last = 0.0;
  for (const TrainState& st : g_weather_states) {
    cat_first += st.history[1].mean_cat_entropy;
    box_first += st.history[1].mean_box_entropy;
    cat_last += st.history.back().mean_cat_entropy;
    box_last += st.history.back().mean_box_entropy;
  }
  report(8, cat_last < cat_first && box_last < box_first,
         fmt("entropy means first->final: category %.3f->%.3f, box %.3f->%.3f",
             cat_first / 3, cat_last / 3, box_first / 3, box_last / 3),
         now_s() - t0);
}

// 9. probabilistic multi-teacher grid is more stable than hard thresholds
static void criterion_9() {
  const double t0 = now_s();
  Bench b = make_bench("weather");
  RunConfig rc;  // pinned tau and threshold grids
  TrainConfig c = trend_cfg(1);
  c.pretrain_steps = 2500;
  RobustnessResult r =
      robustness_study(c, rc.tau_grid, rc.threshold_grid, b.source, b.tgt_train, b.tgt_test);
  const double dt = now_s() - t0;
  report(9, r.tau_std < r.threshold_std && dt < 1800.0,
         fmt("mAP over tau grid %.4f+-%.4f vs threshold grid %.4f+-%.4f", r.tau_mean,
             r.tau_std, r.threshold_mean, r.threshold_std),
         dt);
}

// 10. predicted coordinate variance ranks IoU at least as well as the score
static void criterion_10() {
  const double t0 = now_s();
  Bench b = make_bench("weather");
  TrainConfig c = trend_cfg(4);
  c.pretrain_steps = 10000;
  DetectorParams p = pretrain(c, b.source);
  CalibrationReport cr = sigma_iou_calibration(p, b.tgt_test);
  const bool ok =
      cr.sufficient && std::abs(cr.corr_var_iou) >= std::abs(cr.corr_score_iou);
  std::printf("    calibration bins (by predicted variance): ");
  for (const auto& bin : cr.by_variance)
    std::printf("[var %.3f iou %.3f n=%d] ", bin.predictor_mean, bin.iou_mean, bin.count);
  std::printf("\n    calibration bins (by score):              ");
  for (const auto& bin : cr.by_score)
    std::printf("[scr %.3f iou %.3f n=%d] ", bin.predictor_mean, bin.iou_mean, bin.count);
  std::printf("\n");
  report(10, ok,
         fmt("|rank corr| variance-IoU %.4f vs score-IoU %.4f", std::abs(cr.corr_var_iou),
             std::abs(cr.corr_score_iou)),
         now_s() - t0);
}

// 11. source-free adaptation still improves on camera and synthetic shifts
static void criterion_11() {
  const double t0 = now_s();
  bool ok = true;
  std::string detail = "source-free mean gains:";
  for (const char* preset : {"camera", "synthetic"}) {
    Bench b = make_bench(preset);
    double mean_gain = 0.0;
    for (uint64_t seed : {2, 3, 4}) {
      TrainConfig c = trend_cfg(seed);
      c.source_free = true;
      c.batch_size = 8;
      c.tau_cls = 1.0;
      c.loc_consistency_weight = 0.0;
      c.source_anchor_weight = 0.5;
      c.consistency_negatives = false;
      TrainState st = adapt(c, b.source, b.tgt_train, b.tgt_test);
      mean_gain += st.history.back().teacher_map - st.source_only_map;
    }
    mean_gain /= 3.0;
    ok &= mean_gain > 0.0;
    detail += fmt(" %s %+0.4f", preset, mean_gain);
  }
  report(11, ok, detail, now_s() - t0);
}

// 12. identical config and seed reproduce metrics.csv byte for byte
static void criterion_12() {
  const double t0 = now_s();
  Bench b = make_bench("weather");
  TrainConfig c = trend_cfg(5);
  c.pretrain_steps = 100;
  c.mutual_steps = 50;
  c.eval_every = 25;
  std::ostringstream a, bb;
  write_metrics_csv(a, adapt(c, b.source, b.tgt_train, b.tgt_test).history);
  write_metrics_csv(bb, adapt(c, b.source, b.tgt_train, b.tgt_test).history);
  report(12, !a.str().empty() && a.str() == bb.str(),
         fmt("repeated run metrics are byte-identical (%zu bytes)", a.str().size()),
         now_s() - t0);
}

int main() {
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  criterion_10();
  criterion_11();
  criterion_12();
  std::printf("%d of 12 criteria passed\n", 12 - g_failures);
  return g_failures == 0 ? 0 : 1;
}
