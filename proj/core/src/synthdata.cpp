#include "ugdet/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

namespace ugdet {

namespace {

void box_blur(std::vector<double>& features, int grid, int feat_dim, int radius,
              double weight = 1.0) {
  if (radius <= 0 || weight <= 0.0) return;
  std::vector<double> src = features;
  for (int r = 0; r < grid; ++r) {
    for (int c = 0; c < grid; ++c) {
      for (int ch = 0; ch < feat_dim; ++ch) {
        double acc = 0.0;
        int cnt = 0;
        for (int dr = -radius; dr <= radius; ++dr) {
          for (int dc = -radius; dc <= radius; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if (rr < 0 || rr >= grid || cc < 0 || cc >= grid) continue;
            acc += src[(static_cast<size_t>(rr) * grid + cc) * feat_dim + ch];
            ++cnt;
          }
        }
        double& dst = features[(static_cast<size_t>(r) * grid + c) * feat_dim + ch];
        dst = (1.0 - weight) * dst + weight * acc / cnt;
      }
    }
  }
}

bool contains(const Box& outer, const Box& inner) {
  return outer.x1() <= inner.x1() && outer.y1() <= inner.y1() &&
         outer.x2() >= inner.x2() && outer.y2() >= inner.y2();
}

Scene flip_scene(const Scene& s) {
  Scene out = s;
  for (int r = 0; r < s.grid; ++r)
    for (int c = 0; c < s.grid; ++c)
      for (int ch = 0; ch < s.feat_dim; ++ch)
        out.at(r, c, ch) = s.at(r, s.grid - 1 - c, ch);
  for (Box& b : out.boxes) b.cx = s.grid - b.cx;
  return out;
}

Scene resize_scene(const Scene& s, double scale) {
  if (scale == 1.0) return s;
  Scene out = s;
  std::fill(out.features.begin(), out.features.end(), 0.0);
  // area-weighted resampling so sub-cell boundary cues scale with the
  // boxes instead of snapping to the nearest source cell
  for (int r = 0; r < s.grid; ++r) {
    for (int c = 0; c < s.grid; ++c) {
      const double y1 = r / scale, y2 = (r + 1) / scale;
      const double x1 = c / scale, x2 = (c + 1) / scale;
      if (y1 >= s.grid || x1 >= s.grid) continue;
      double wsum = 0.0;
      const int r1 = static_cast<int>(y1), r2 = std::min(static_cast<int>(std::ceil(y2)), s.grid);
      const int c1 = static_cast<int>(x1), c2 = std::min(static_cast<int>(std::ceil(x2)), s.grid);
      for (int sr = r1; sr < r2; ++sr) {
        for (int sc = c1; sc < c2; ++sc) {
          const double oy = std::min(y2, sr + 1.0) - std::max(y1, static_cast<double>(sr));
          const double ox = std::min(x2, sc + 1.0) - std::max(x1, static_cast<double>(sc));
          if (oy <= 0.0 || ox <= 0.0) continue;
          const double w = oy * ox;
          for (int ch = 0; ch < s.feat_dim; ++ch) out.at(r, c, ch) += w * s.at(sr, sc, ch);
          wsum += w;
        }
      }
      if (wsum > 0.0) {
        for (int ch = 0; ch < s.feat_dim; ++ch) out.at(r, c, ch) /= wsum;
      }
    }
  }
  for (Box& b : out.boxes) {
    b.cx *= scale;
    b.cy *= scale;
    b.w *= scale;
    b.h *= scale;
  }
  return out;
}

}  // namespace

std::vector<double> class_prototype(int label, int feat_dim,
                                    double prototype_offset) {
  if (label < 1) throw std::invalid_argument("labels start at 1");
  std::mt19937_64 rng(0x9e3779b9u + static_cast<uint64_t>(label) * 7919u);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> proto(feat_dim);
  for (double& v : proto) v = 2.0 * n(rng) + prototype_offset;
  return proto;
}

std::vector<Scene> generate_domain(const DomainConfig& cfg, int count,
                                   uint64_t seed, DomainTag tag,
                                   GenDiagnostics* diag) {
  if (count < 1) throw std::invalid_argument("count must be >= 1");
  if (cfg.noise_scale < 0.0 || cfg.box_scale <= 0.0) {
    throw std::invalid_argument("bad domain config");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  std::vector<std::vector<double>> protos;
  for (int c = 1; c <= cfg.num_classes; ++c) {
    protos.push_back(class_prototype(c, cfg.feat_dim, cfg.prototype_offset));
  }

  std::vector<Scene> scenes;
  scenes.reserve(count);
  const double g = cfg.grid;
  for (int si = 0; si < count; ++si) {
    Scene s;
    s.grid = cfg.grid;
    s.feat_dim = cfg.feat_dim;
    s.tag = tag;
    s.features.assign(static_cast<size_t>(cfg.grid) * cfg.grid * cfg.feat_dim, 0.0);

    const int want = cfg.min_objects +
        static_cast<int>(uni(rng) * (cfg.max_objects - cfg.min_objects + 1));
    for (int oi = 0; oi < std::min(want, cfg.max_objects); ++oi) {
      bool placed = false;
      for (int attempt = 0; attempt < 25 && !placed; ++attempt) {
        Box b;
        b.w = std::min((cfg.min_extent + uni(rng) * (cfg.max_extent - cfg.min_extent)) *
                           cfg.box_scale, g);
        b.h = std::min((cfg.min_extent + uni(rng) * (cfg.max_extent - cfg.min_extent)) *
                           cfg.box_scale, g);
        b.cx = 0.5 * b.w + uni(rng) * (g - b.w);
        b.cy = 0.5 * b.h + uni(rng) * (g - b.h);
        const int label = 1 + static_cast<int>(uni(rng) * cfg.num_classes);
        bool bad = false;
        for (size_t j = 0; j < s.boxes.size(); ++j) {
          if (s.labels[j] == label &&
              (contains(s.boxes[j], b) || contains(b, s.boxes[j]))) {
            bad = true;
            break;
          }
        }
        if (bad) continue;
        s.boxes.push_back(b);
        s.labels.push_back(std::min(label, cfg.num_classes));
        placed = true;
      }
      if (!placed && diag) ++diag->placement_failures;
    }

    // features: mixing * (coverage-weighted sum of prototypes) + noise,
    // then blur. Fractional cell coverage keeps object boundaries
    // observable at sub-cell precision.
    for (int r = 0; r < cfg.grid; ++r) {
      for (int c = 0; c < cfg.grid; ++c) {
        std::vector<double> acc(cfg.feat_dim, 0.0);
        for (size_t j = 0; j < s.boxes.size(); ++j) {
          const Box& b = s.boxes[j];
          const double ox = std::max(0.0, std::min(b.x2(), c + 1.0) - std::max(b.x1(), static_cast<double>(c)));
          const double oy = std::max(0.0, std::min(b.y2(), r + 1.0) - std::max(b.y1(), static_cast<double>(r)));
          const double cov = ox * oy;
          if (cov > 0.0) {
            const auto& p = protos[s.labels[j] - 1];
            for (int ch = 0; ch < cfg.feat_dim; ++ch) acc[ch] += cov * p[ch];
          }
        }
        if (!cfg.mixing.empty()) {
          if (cfg.mixing.size() !=
              static_cast<size_t>(cfg.feat_dim) * cfg.feat_dim) {
            throw std::invalid_argument("mixing matrix size mismatch");
          }
          std::vector<double> mixed(cfg.feat_dim, 0.0);
          for (int i = 0; i < cfg.feat_dim; ++i)
            for (int k = 0; k < cfg.feat_dim; ++k)
              mixed[i] += cfg.mixing[i * cfg.feat_dim + k] * acc[k];
          acc = mixed;
        }
        for (int ch = 0; ch < cfg.feat_dim; ++ch) {
          s.at(r, c, ch) = acc[ch] + cfg.noise_scale * noise(rng);
        }
      }
    }
    box_blur(s.features, cfg.grid, cfg.feat_dim, cfg.blur_radius, cfg.blur_weight);
    scenes.push_back(std::move(s));
  }
  return scenes;
}

std::pair<Scene, AugmentRecord> weak_augment(const Scene& s, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  AugmentRecord rec;
  rec.flip = uni(rng) < 0.5;
  rec.resize = 1.0;
  rec.perturb_seed = seed;
  return {rec.flip ? flip_scene(s) : s, rec};
}

std::pair<Scene, AugmentRecord> strong_augment(const Scene& s, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  AugmentRecord rec;
  rec.perturb_seed = seed;

  rec.flip = uni(rng) < 0.5;
  Scene out = rec.flip ? flip_scene(s) : s;

  if (uni(rng) < 0.8) {  // per-channel affine jitter
    for (int ch = 0; ch < out.feat_dim; ++ch) {
      const double a = 0.85 + 0.3 * uni(rng);
      const double b = -0.15 + 0.3 * uni(rng);
      for (int r = 0; r < out.grid; ++r)
        for (int c = 0; c < out.grid; ++c) out.at(r, c, ch) = a * out.at(r, c, ch) + b;
    }
  }
  if (uni(rng) < 0.5) {  // channel-pair mixing, the color-jitter analog
    std::uniform_int_distribution<int> pick(0, out.feat_dim - 1);
    for (int rep = 0; rep < 2; ++rep) {
      const int i = pick(rng);
      int j = pick(rng);
      if (i == j) continue;
      const double th = -0.4 + 0.8 * uni(rng);
      const double c = std::cos(th), sn = std::sin(th);
      for (int r = 0; r < out.grid; ++r) {
        for (int cc = 0; cc < out.grid; ++cc) {
          const double a = out.at(r, cc, i), b = out.at(r, cc, j);
          out.at(r, cc, i) = c * a - sn * b;
          out.at(r, cc, j) = sn * a + c * b;
        }
      }
    }
  }
  if (uni(rng) < 0.2) {  // partial channel blend, the grayscale analog
    for (int r = 0; r < out.grid; ++r) {
      for (int c = 0; c < out.grid; ++c) {
        double m = 0.0;
        for (int ch = 0; ch < out.feat_dim; ++ch) m += out.at(r, c, ch);
        m /= out.feat_dim;
        for (int ch = 0; ch < out.feat_dim; ++ch) {
          out.at(r, c, ch) = 0.7 * out.at(r, c, ch) + 0.3 * m;
        }
      }
    }
  }
  if (uni(rng) < 0.3) {  // grid smoothing, the blur analog
    box_blur(out.features, out.grid, out.feat_dim, 1);
  }
  if (uni(rng) < 0.5) {  // additive feature noise
    std::normal_distribution<double> n(0.0, 0.3);
    for (double& v : out.features) v += n(rng);
  }
  rec.resize = 0.7 + 0.3 * uni(rng);
  out = resize_scene(out, rec.resize);
  return {std::move(out), rec};
}

std::vector<Box> transform_boxes(const std::vector<Box>& boxes,
                                 const AugmentRecord& rec, int grid_extent) {
  std::vector<Box> out = boxes;
  for (Box& b : out) {
    if (rec.flip) b.cx = grid_extent - b.cx;
    b.cx *= rec.resize;
    b.cy *= rec.resize;
    b.w *= rec.resize;
    b.h *= rec.resize;
  }
  return out;
}

std::vector<Box> transform_weak_to_strong(const std::vector<Box>& boxes,
                                          const AugmentRecord& weak,
                                          const AugmentRecord& strong,
                                          int grid_extent) {
  // Weak is flip-only, which is its own inverse.
  AugmentRecord undo_weak{weak.flip, 1.0, 0};
  return transform_boxes(transform_boxes(boxes, undo_weak, grid_extent), strong,
                         grid_extent);
}

void write_dataset(std::ostream& os, const std::vector<Scene>& scenes) {
  os << kDatasetSchema << "\n";
  for (const Scene& s : scenes) {
    nlohmann::json j;
    j["domain_tag"] = s.tag == DomainTag::kSource ? "source" : "target";
    j["grid"] = s.grid;
    j["feat_dim"] = s.feat_dim;
    j["features"] = s.features;
    nlohmann::json boxes = nlohmann::json::array();
    for (const Box& b : s.boxes) boxes.push_back({b.cx, b.cy, b.w, b.h});
    j["boxes"] = boxes;
    j["labels"] = s.labels;
    os << j.dump() << "\n";
  }
}

std::vector<Scene> read_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kDatasetSchema) {
    throw std::runtime_error("unrecognized dataset schema header");
  }
  std::vector<Scene> scenes;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    Scene s;
    s.tag = j.at("domain_tag") == "source" ? DomainTag::kSource : DomainTag::kTarget;
    s.grid = j.at("grid");
    s.feat_dim = j.at("feat_dim");
    s.features = j.at("features").get<std::vector<double>>();
    for (const auto& b : j.at("boxes")) {
      s.boxes.push_back(Box{b[0], b[1], b[2], b[3]});
    }
    s.labels = j.at("labels").get<std::vector<int>>();
    scenes.push_back(std::move(s));
  }
  return scenes;
}

}  // namespace ugdet
