#include "ugdet/probdist.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace ugdet {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)
}

bool CategoricalDist::valid(double eps) const {
  if (probs.size() < 2) return false;
  double s = 0.0;
  for (double p : probs) {
    if (p < 0.0 || !std::isfinite(p)) return false;
    s += p;
  }
  return std::fabs(s - 1.0) <= eps;
}

void CategoricalDist::validate() const {
  if (!valid()) throw std::invalid_argument("invalid categorical distribution");
}

CategoricalDist CategoricalDist::one_hot(int index, int n_plus_1) {
  if (index < 0 || index >= n_plus_1) throw std::invalid_argument("one_hot index");
  CategoricalDist d;
  d.probs.assign(n_plus_1, 0.0);
  d.probs[index] = 1.0;
  return d;
}

CategoricalDist CategoricalDist::uniform(int n_plus_1) {
  CategoricalDist d;
  d.probs.assign(n_plus_1, 1.0 / n_plus_1);
  return d;
}

double categorical_entropy(const CategoricalDist& p) {
  p.validate();
  double h = 0.0;
  for (double x : p.probs) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return std::max(h, 0.0);
}

double categorical_cross_entropy(const CategoricalDist& target,
                                 const CategoricalDist& pred) {
  target.validate();
  pred.validate();
  if (target.probs.size() != pred.probs.size()) {
    throw std::invalid_argument("distribution size mismatch");
  }
  double h = 0.0;
  for (size_t i = 0; i < target.probs.size(); ++i) {
    if (target.probs[i] > 0.0) {
      if (pred.probs[i] <= 0.0) throw std::domain_error("log of zero probability");
      h -= target.probs[i] * std::log(pred.probs[i]);
    }
  }
  return h;
}

double gaussian_entropy(double variance) {
  if (variance <= 0.0) throw std::domain_error("non-positive variance");
  return 0.5 * std::log(2.0 * std::numbers::pi * variance) + 0.5;
}

double ce_dirac_gaussian(double a, double mean, double variance) {
  if (variance <= 0.0) throw std::domain_error("non-positive variance");
  const double r = a - mean;
  return 0.5 * (kLog2Pi + std::log(variance) + r * r / variance);
}

double ce_gaussian_gaussian(double m1, double v1, double m2, double v2) {
  if (v1 <= 0.0 || v2 <= 0.0) throw std::domain_error("non-positive variance");
  const double d = m1 - m2;
  return 0.5 * (kLog2Pi + std::log(v2) + (v1 + d * d) / v2);
}

CategoricalDist sharpen_categorical(std::span<const double> logits, double tau_cls) {
  if (tau_cls <= 0.0) throw std::invalid_argument("temperature must be positive");
  if (logits.empty()) throw std::invalid_argument("empty logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  CategoricalDist d;
  d.probs.resize(logits.size());
  double z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    d.probs[i] = std::exp((logits[i] - mx) / tau_cls);
    z += d.probs[i];
  }
  for (double& p : d.probs) p /= z;
  return d;
}

CategoricalDist sharpen_dist(const CategoricalDist& p, double tau_cls) {
  if (tau_cls <= 0.0) throw std::invalid_argument("temperature must be positive");
  p.validate();
  // p^(1/tau) renormalized; zero entries stay zero.
  CategoricalDist d;
  d.probs.resize(p.probs.size());
  double z = 0.0;
  for (size_t i = 0; i < p.probs.size(); ++i) {
    d.probs[i] = p.probs[i] > 0.0 ? std::pow(p.probs[i], 1.0 / tau_cls) : 0.0;
    z += d.probs[i];
  }
  for (double& x : d.probs) x /= z;
  return d;
}

GaussianCoord sharpen_gaussian(const GaussianCoord& d, double tau_bbox) {
  if (tau_bbox <= 0.0 || tau_bbox > 1.0) {
    throw std::invalid_argument("tau_bbox must lie in (0,1]");
  }
  return GaussianCoord{d.mean, d.variance * tau_bbox};
}

CategoricalDist merge_foreground(const CategoricalDist& p) {
  p.validate();
  CategoricalDist d;
  const double fg =
      std::accumulate(p.probs.begin(), p.probs.end() - 1, 0.0);
  d.probs = {fg, p.probs.back()};
  return d;
}

EntropyNorms efl_norms(int n) {
  if (n < 1) throw std::invalid_argument("need at least one foreground class");
  EntropyNorms e;
  e.cls = std::log(static_cast<double>(n + 1));
  e.rpn = std::log(2.0);
  e.loc = 0.5 * kLog2Pi + 0.5;
  return e;
}

double efl_weight(double entropy, double norm, double lambda) {
  if (lambda < 0.0 || norm <= 0.0) throw std::invalid_argument("bad EFL config");
  const double ratio = std::clamp(entropy / norm, 0.0, 1.0);
  return std::pow(1.0 - ratio, lambda);
}

}  // namespace ugdet
