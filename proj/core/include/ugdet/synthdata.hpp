#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "ugdet/geometry.hpp"

namespace ugdet {

enum class DomainTag { kSource, kTarget };

// A synthetic "image": a G x G grid of D-dimensional feature cells plus
// ground-truth boxes and labels (class ids 1..n).
struct Scene {
  int grid = 16;
  int feat_dim = 8;
  std::vector<double> features;  // grid*grid*feat_dim, row-major cells
  std::vector<Box> boxes;
  std::vector<int> labels;
  DomainTag tag = DomainTag::kSource;

  double& at(int row, int col, int ch) {
    return features[(static_cast<size_t>(row) * grid + col) * feat_dim + ch];
  }
  double at(int row, int col, int ch) const {
    return features[(static_cast<size_t>(row) * grid + col) * feat_dim + ch];
  }
};

struct DomainConfig {
  int grid = 16;
  int feat_dim = 8;
  int num_classes = 3;
  int min_objects = 1;
  int max_objects = 4;
  double min_extent = 1.5;
  double max_extent = 2.5;
  double noise_scale = 0.1;
  int blur_radius = 0;           // box-blur radius in cells
  double blur_weight = 1.0;      // blend of blurred vs original features
  double box_scale = 1.0;        // global multiplier on object extents
  double prototype_offset = 0.0; // additive shift of class prototypes
  // feat_dim x feat_dim channel mixing matrix; empty means identity.
  std::vector<double> mixing;
};

// Class-conditional feature prototype, deterministic in (label, feat_dim).
std::vector<double> class_prototype(int label, int feat_dim,
                                    double prototype_offset);

// Deterministic given seed. Objects are placed so that no box fully
// contains another box of the same class; after bounded retries the
// scene is emitted with fewer objects and `placement_failures` counts it.
struct GenDiagnostics {
  int placement_failures = 0;
};

std::vector<Scene> generate_domain(const DomainConfig& cfg, int count,
                                   uint64_t seed, DomainTag tag,
                                   GenDiagnostics* diag = nullptr);

struct AugmentRecord {
  bool flip = false;
  double resize = 1.0;  // s in (0.5, 1] for strong, 1 for weak
  uint64_t perturb_seed = 0;
};

// Horizontal flip with probability 0.5.
std::pair<Scene, AugmentRecord> weak_augment(const Scene& s, uint64_t seed);

// Feature-space analogs of a strong augmentation pipeline:
// flip(0.5) -> per-channel affine jitter(0.8) -> channel averaging(0.2)
// -> grid smoothing(0.5) -> feature reflection(0.2) -> resize s in
// (0.5,1] with zero padding at the origin corner (1.0).
std::pair<Scene, AugmentRecord> strong_augment(const Scene& s, uint64_t seed);

// Apply the geometric part of a record (flip then resize) to boxes.
std::vector<Box> transform_boxes(const std::vector<Box>& boxes,
                                 const AugmentRecord& rec, int grid_extent);

// Map boxes expressed in a weak view back to the base scene and then
// into a strong view.
std::vector<Box> transform_weak_to_strong(const std::vector<Box>& boxes,
                                          const AugmentRecord& weak,
                                          const AugmentRecord& strong,
                                          int grid_extent);

// Line-oriented dataset serialization. Line 1 is a schema header;
// each following line is one self-contained JSON scene record.
inline constexpr const char* kDatasetSchema = "ugdet-dataset-v1";

void write_dataset(std::ostream& os, const std::vector<Scene>& scenes);
std::vector<Scene> read_dataset(std::istream& is);

}  // namespace ugdet
