#include <doctest.h>

#include <cmath>
#include <random>

#include "ugdet/geometry.hpp"

using namespace ugdet;

TEST_CASE("iou values") {
  Box a = Box::from_corners(0, 0, 2, 2);
  CHECK(iou(a, a) == doctest::Approx(1.0).epsilon(1e-14));
  Box far = Box::from_corners(5, 5, 6, 6);
  CHECK(iou(a, far) == 0.0);
  Box b = Box::from_corners(1, 1, 3, 3);
  CHECK(iou(a, b) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
  CHECK(iou(b, a) == iou(a, b));
}

TEST_CASE("delta coding") {
  Box ref{4, 4, 2, 2};
  auto zero = encode_deltas(ref, ref);
  for (double v : zero) CHECK(v == doctest::Approx(0.0).epsilon(1e-14));
  Box twice{4, 4, 4, 4};
  auto t = encode_deltas(twice, ref);
  CHECK(t[0] == 0.0);
  CHECK(t[1] == 0.0);
  CHECK(t[2] == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(t[3] == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  Box back = decode_deltas({0, 0, 0, 0}, ref, 0);
  CHECK(back.cx == ref.cx);
  CHECK(back.w == ref.w);
  Box wider = decode_deltas({0, 0, std::log(2.0), 0}, ref, 0);
  CHECK(wider.w == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("encode/decode roundtrip, 1000 random pairs") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> pos(2.0, 14.0), ext(0.5, 4.0);
  for (int it = 0; it < 1000; ++it) {
    Box gt{pos(rng), pos(rng), ext(rng), ext(rng)};
    Box ref{pos(rng), pos(rng), ext(rng), ext(rng)};
    Box rt = decode_deltas(encode_deltas(gt, ref), ref, 0);
    CHECK(rt.cx == doctest::Approx(gt.cx).epsilon(1e-12));
    CHECK(rt.cy == doctest::Approx(gt.cy).epsilon(1e-12));
    CHECK(rt.w == doctest::Approx(gt.w).epsilon(1e-12));
    CHECK(rt.h == doctest::Approx(gt.h).epsilon(1e-12));
  }
}

TEST_CASE("decode clamps into scene bounds") {
  Box ref{15, 15, 4, 4};
  Box c = decode_deltas({2.0, 2.0, 1.0, 1.0}, ref, 16.0);
  CHECK(c.x2() <= 16.0 + 1e-12);
  CHECK(c.y2() <= 16.0 + 1e-12);
  CHECK(c.w >= kMinBoxExtent);
}

TEST_CASE("nms") {
  std::vector<Box> one = {{4, 4, 2, 2}};
  CHECK(nms(one, {0.7}, 0.5) == std::vector<int>{0});

  std::vector<Box> dup = {{4, 4, 2, 2}, {4, 4, 2, 2}};
  CHECK(nms(dup, {0.9, 0.8}, 0.5) == std::vector<int>{0});
  CHECK(nms(dup, {0.8, 0.9}, 0.5) == std::vector<int>{1});

  std::vector<Box> apart = {{2, 2, 2, 2}, {10, 10, 2, 2}};
  CHECK(nms(apart, {0.5, 0.9}, 0.5) == std::vector<int>{1, 0});

  // tie goes to input order
  CHECK(nms(dup, {0.5, 0.5}, 0.5) == std::vector<int>{0});
}

TEST_CASE("matching rules") {
  // candidate == target
  {
    auto m = match_targets({{4, 4, 2, 2}}, {{4, 4, 2, 2}}, 0.5, 0.3);
    CHECK(m.assignment == std::vector<int>{0});
    CHECK(m.positives == std::vector<int>{0});
  }
  // no targets: all negative
  {
    auto m = match_targets({{4, 4, 2, 2}, {8, 8, 2, 2}}, {}, 0.5, 0.3);
    CHECK(m.assignment == std::vector<int>{-1, -1});
    CHECK(m.negatives.size() == 2);
  }
  // IoUs (0.6, 0.4, 0.1) vs thresholds (0.5, 0.3): positive, ignored, negative.
  // Construct via aligned boxes: target 10x10 at origin corner, candidates
  // overlapping 6/10, 4/10 (after union), and a sliver.
  {
    Box target = Box::from_corners(0, 0, 10, 1);
    Box c_pos = Box::from_corners(0, 0, 6, 1);      // iou 0.6
    Box c_ign = Box::from_corners(0, 0, 4, 1);      // iou 0.4
    Box c_neg = Box::from_corners(9, 0, 19, 1);     // iou 1/19
    auto m = match_targets({c_pos, c_ign, c_neg}, {target}, 0.5, 0.3);
    CHECK(m.assignment[0] == 0);
    CHECK(m.assignment[1] == -2);
    CHECK(m.assignment[2] == -1);
  }
  // each target claims its best candidate even below pos_thresh
  {
    Box target{4, 4, 2, 2};
    Box weak_cand{5, 5, 2, 2};
    auto m = match_targets({weak_cand}, {target}, 0.9, 0.05);
    CHECK(m.assignment == std::vector<int>{0});
  }
  // empty candidates
  {
    auto m = match_targets({}, {{4, 4, 2, 2}}, 0.5, 0.3);
    CHECK(m.assignment.empty());
  }
}

TEST_CASE("every overlapped target gets a positive") {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> pos(2.0, 14.0), ext(1.0, 3.0);
  for (int it = 0; it < 200; ++it) {
    std::vector<Box> cands, targets;
    for (int i = 0; i < 6; ++i) cands.push_back({pos(rng), pos(rng), ext(rng), ext(rng)});
    for (int i = 0; i < 2; ++i) targets.push_back({pos(rng), pos(rng), ext(rng), ext(rng)});
    auto m = match_targets(cands, targets, 0.5, 0.3);
    for (size_t tg = 0; tg < targets.size(); ++tg) {
      double best = 0.0;
      int best_idx = -1;
      for (size_t i = 0; i < cands.size(); ++i) {
        const double v = iou(cands[i], targets[tg]);
        if (v > best) best = v, best_idx = static_cast<int>(i);
      }
      if (best <= 0.0) continue;
      // the target's best candidate is a positive for some target (it may be
      // claimed by another target that overlaps the same candidate more)
      CHECK(m.assignment[best_idx] >= 0);
    }
  }
}
