#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "ugdet/config.hpp"
#include "ugdet/trainer.hpp"

using namespace ugdet;

namespace {
TrainConfig tiny_cfg() {
  TrainConfig c;
  c.det.grid = 8;
  c.det.feat_dim = 4;
  c.det.hidden = 8;
  c.det.proposals = 12;
  c.pretrain_steps = 30;
  c.mutual_steps = 10;
  c.batch_size = 2;
  c.lr = 0.01;
  c.eval_every = 5;
  return c;
}

std::vector<Scene> tiny_domain(uint64_t seed, DomainTag tag, int count = 12) {
  DomainConfig d;
  d.grid = 8;
  d.feat_dim = 4;
  return generate_domain(d, count, seed, tag);
}
}  // namespace

TEST_CASE("ema update is the exact convex combination") {
  TrainConfig cfg = tiny_cfg();
  DetectorParams t = DetectorParams::init(cfg.det, 1);
  DetectorParams s = DetectorParams::init(cfg.det, 2);
  DetectorParams t0 = t;

  DetectorParams frozen = t;
  ema_update(frozen, s, 1.0);
  CHECK(frozen.flat == t0.flat);

  DetectorParams copy = t;
  ema_update(copy, s, 0.0);
  CHECK(copy.flat == s.flat);

  const double alpha = 0.9996;
  ema_update(t, s, alpha);
  for (size_t i = 0; i < t.flat.size(); ++i) {
    CHECK(t.flat[i] ==
          doctest::Approx(alpha * t0.flat[i] + (1 - alpha) * s.flat[i]).epsilon(1e-14));
  }
  // the paper's arithmetic case: 0.9996 between 0 and 1
  DetectorParams zero = t0, one = t0;
  std::fill(zero.flat.begin(), zero.flat.end(), 0.0);
  std::fill(one.flat.begin(), one.flat.end(), 1.0);
  ema_update(zero, one, 0.9996);
  CHECK(zero.flat[0] == doctest::Approx(0.0004).epsilon(1e-12));
}

TEST_CASE("pretrain is deterministic and zero steps is identity") {
  TrainConfig cfg = tiny_cfg();
  auto src = tiny_domain(3, DomainTag::kSource);
  DetectorParams a = pretrain(cfg, src);
  DetectorParams b = pretrain(cfg, src);
  CHECK(a.flat == b.flat);

  TrainConfig zero = cfg;
  zero.pretrain_steps = 0;
  CHECK(pretrain(zero, src).flat == DetectorParams::init(cfg.det, cfg.seed).flat);
}

TEST_CASE("pretrain loss decreases") {
  TrainConfig cfg = tiny_cfg();
  cfg.pretrain_steps = 200;
  std::vector<double> hist;
  pretrain(cfg, tiny_domain(5, DomainTag::kSource, 24), &hist);
  REQUIRE(hist.size() == 200);
  double head = 0, tail = 0;
  for (int i = 0; i < 50; ++i) {
    head += hist[i];
    tail += hist[hist.size() - 1 - i];
  }
  CHECK(tail < head);
}

TEST_CASE("teacher gradients are identically zero each mutual step") {
  TrainConfig cfg = tiny_cfg();
  auto src = tiny_domain(7, DomainTag::kSource);
  auto tgt = tiny_domain(8, DomainTag::kTarget);

  TrainState st;
  st.student = pretrain(cfg, src);
  st.teacher = st.student;
  st.pretrained = st.student.flat;
  st.velocity.assign(st.student.flat.size(), 0.0);
  st.rng.seed(9);

  for (int step = 0; step < 5; ++step) {
    DetectorParams teacher_before = st.teacher;
    DetectorParams student_before = st.student;
    mutual_learn_step(st, cfg, {src.data(), 2}, {tgt.data(), 2});
    // teacher moved only through the EMA rule
    for (size_t i = 0; i < st.teacher.flat.size(); ++i) {
      const double want = cfg.ema_alpha * teacher_before.flat[i] +
                          (1 - cfg.ema_alpha) * st.student.flat[i];
      CHECK(st.teacher.flat[i] == doctest::Approx(want).epsilon(1e-12));
    }
    // convexity bound on the teacher move
    double max_t = 0, max_s = 0;
    for (size_t i = 0; i < st.teacher.flat.size(); ++i) {
      max_t = std::max(max_t, std::abs(st.teacher.flat[i] - teacher_before.flat[i]));
      max_s = std::max(max_s, std::abs(st.student.flat[i] - teacher_before.flat[i]));
    }
    CHECK(max_t <= (1 - cfg.ema_alpha) * max_s + 1e-12);
    (void)student_before;
  }
}

TEST_CASE("anchors stay positive and only adapt when enabled") {
  TrainConfig cfg = tiny_cfg();
  cfg.anchor_adapt = false;
  auto src = tiny_domain(11, DomainTag::kSource);
  auto tgt = tiny_domain(12, DomainTag::kTarget);
  TrainState st = adapt(cfg, src, tgt, tgt);
  const auto w0 = cfg.det.anchor_init;
  auto w = st.student.anchor_widths();
  for (size_t i = 0; i < w.size(); ++i) CHECK(w[i] == w0[i]);

  cfg.anchor_adapt = true;
  TrainState st2 = adapt(cfg, src, tgt, tgt);
  for (double v : st2.student.anchor_widths()) CHECK(v > 0.0);
  for (double v : st2.student.anchor_heights()) CHECK(v > 0.0);
}

TEST_CASE("adapt records history and is deterministic") {
  TrainConfig cfg = tiny_cfg();
  auto src = tiny_domain(13, DomainTag::kSource);
  auto tgt = tiny_domain(14, DomainTag::kTarget);
  TrainState a = adapt(cfg, src, tgt, tgt);
  TrainState b = adapt(cfg, src, tgt, tgt);
  CHECK(a.student.flat == b.student.flat);
  CHECK(a.teacher.flat == b.teacher.flat);
  REQUIRE(a.history.size() == b.history.size());
  // step 0 plus every eval_every checkpoint
  CHECK(a.history.size() == 1 + cfg.mutual_steps / cfg.eval_every);
  for (size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].teacher_map == b.history[i].teacher_map);
    // step-0 rows carry NaN losses, so compare bit patterns
    CHECK(std::isnan(a.history[i].loss_total) == std::isnan(b.history[i].loss_total));
    if (!std::isnan(a.history[i].loss_total))
      CHECK(a.history[i].loss_total == b.history[i].loss_total);
  }
}

TEST_CASE("source-free run drops source losses") {
  TrainConfig cfg = tiny_cfg();
  cfg.source_free = true;
  auto src = tiny_domain(15, DomainTag::kSource);
  auto tgt = tiny_domain(16, DomainTag::kTarget);
  TrainState st = adapt(cfg, src, tgt, tgt);
  for (size_t i = 1; i < st.history.size(); ++i) {
    CHECK(std::isnan(st.history[i].src_cls_rpn));
    CHECK(std::isnan(st.history[i].src_bbox_roi));
  }
}

TEST_CASE("warm start skips pretraining") {
  TrainConfig cfg = tiny_cfg();
  auto src = tiny_domain(17, DomainTag::kSource);
  auto tgt = tiny_domain(18, DomainTag::kTarget);
  DetectorParams base = pretrain(cfg, src);
  TrainState st = adapt(cfg, src, tgt, tgt, &base);
  TrainState st2 = adapt(cfg, src, tgt, tgt);
  // identical because adapt's own pretrain produces the same base
  CHECK(st.student.flat == st2.student.flat);
}

TEST_CASE("config validation") {
  TrainConfig cfg = tiny_cfg();
  cfg.tau_cls = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_cfg();
  cfg.ema_alpha = 1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_cfg();
  cfg.lambda_efl = -0.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_cfg();
  cfg.lambda_t = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
