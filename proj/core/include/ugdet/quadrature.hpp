#pragma once

#include <cmath>
#include <functional>

namespace ugdet {

// Composite Simpson on [a, b]. n is forced even.
inline double simpson(const std::function<double(double)>& f, double a,
                      double b, int n = 4000) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double acc = f(a) + f(b);
  for (int i = 1; i < n; ++i) acc += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

// E_q[g(x)] for q = N(mu, var), integrating over mu +- 12 sigma.
inline double gaussian_expectation(double mu, double var,
                                   const std::function<double(double)>& g,
                                   int n = 4000) {
  const double sigma = std::sqrt(var);
  const double norm = 1.0 / (sigma * std::sqrt(2.0 * M_PI));
  auto integrand = [&](double x) {
    const double z = (x - mu) / sigma;
    return norm * std::exp(-0.5 * z * z) * g(x);
  };
  return simpson(integrand, mu - 12.0 * sigma, mu + 12.0 * sigma, n);
}

// -E_{N(m1,v1)}[log N(x; m2, v2)] by quadrature.
inline double quad_ce_gaussian_gaussian(double m1, double v1, double m2,
                                        double v2) {
  return gaussian_expectation(m1, v1, [&](double x) {
    const double d = x - m2;
    return 0.5 * (std::log(2.0 * M_PI * v2) + d * d / v2);
  });
}

// -log N(a; mu, var), the Dirac-Gaussian cross entropy, checked by
// integrating against a narrow Gaussian surrogate for the Dirac; the
// surrogate contributes +surrogate_var/(2 var) of bias, negligible
// at the default width.
inline double quad_ce_dirac_gaussian(double a, double mu, double var,
                                     double surrogate_var = 1e-10) {
  return quad_ce_gaussian_gaussian(a, surrogate_var, mu, var);
}

// H[N(mu, var)] by quadrature of -q log q.
inline double quad_gaussian_entropy(double var) {
  return gaussian_expectation(0.0, var, [&](double x) {
    return 0.5 * (std::log(2.0 * M_PI * var) + x * x / var);
  });
}

}  // namespace ugdet
