#pragma once

#include <array>
#include <span>
#include <vector>

namespace ugdet {

// Probability vector over n foreground classes plus background.
// Layout: foreground classes at indices 0..n-1, background last.
struct CategoricalDist {
  std::vector<double> probs;

  int num_foreground() const { return static_cast<int>(probs.size()) - 1; }
  double background() const { return probs.back(); }
  bool valid(double eps = 1e-9) const;
  void validate() const;  // throws std::invalid_argument if not valid

  static CategoricalDist one_hot(int index, int n_plus_1);
  static CategoricalDist uniform(int n_plus_1);
};

// One box-delta coordinate as a univariate Gaussian. The variance is
// produced through a sigmoid squashing, so 0 < variance < 1.
struct GaussianCoord {
  double mean = 0.0;
  double variance = 0.5;
};

struct BoxDist {
  std::array<GaussianCoord, 4> coords;  // (t_x, t_y, t_w, t_h)
};

// Entropies in nats throughout.

// H = -sum p log p, with 0 log 0 = 0. Range [0, log(n+1)].
double categorical_entropy(const CategoricalDist& p);

// -sum target log pred. Requires pred > 0 wherever target > 0.
double categorical_cross_entropy(const CategoricalDist& target,
                                 const CategoricalDist& pred);

// Differential entropy of N(mu, variance): 0.5*log(2*pi*variance) + 0.5.
double gaussian_entropy(double variance);

// Cross-entropy between a Dirac delta at a and N(mean, variance):
// 0.5*(log 2pi + log variance + (a-mean)^2/variance).
double ce_dirac_gaussian(double a, double mean, double variance);

// Cross-entropy between N(m1, v1) and N(m2, v2):
// 0.5*(log 2pi + log v2 + (v1 + (m1-m2)^2)/v2).
double ce_gaussian_gaussian(double m1, double v1, double m2, double v2);

// Temperature softmax over raw logits (row-max subtracted).
CategoricalDist sharpen_categorical(std::span<const double> logits, double tau_cls);

// Temperature applied to an already-normalized distribution via its
// log-probabilities, equivalent to re-softmaxing stored logits.
CategoricalDist sharpen_dist(const CategoricalDist& p, double tau_cls);

// Variance scaling: mean unchanged, variance *= tau_bbox, tau in (0,1].
GaussianCoord sharpen_gaussian(const GaussianCoord& d, double tau_bbox);

// Collapse to (foreground, background): fg = sum of classes, bg last.
CategoricalDist merge_foreground(const CategoricalDist& p);

struct EntropyNorms {
  double cls = 0.0;  // log(n+1)
  double rpn = 0.0;  // log 2, the merged two-way head
  double loc = 0.0;  // 0.5*log(2*pi) + 0.5
};

EntropyNorms efl_norms(int n);

// (1 - E/E_norm)^lambda clamped into [0,1].
double efl_weight(double entropy, double norm, double lambda);

}  // namespace ugdet
