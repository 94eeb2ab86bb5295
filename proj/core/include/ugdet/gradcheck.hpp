#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ugdet {

struct GradCheckReport {
  double max_rel_err = 0.0;
  int worst_index = -1;
  bool pass = false;
};

// Central-difference gradient check of a deterministic scalar function
// against an analytic gradient. eps must lie in [1e-7, 1e-3]. Relative
// error per coordinate is |a - n| / max(|a|, |n|, 1e-6).
GradCheckReport finite_diff_check(
    const std::function<double(std::span<const double>)>& f,
    std::vector<double> params, std::span<const double> analytic_grad,
    double eps, double tol);

struct SuiteResult {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Checks every tape operation at `points_per_op` random inputs: each op
// output is contracted to a scalar with a fixed random projection and
// the tape gradient is compared against central differences.
std::vector<SuiteResult> fd_op_suite(uint64_t seed, int points_per_op,
                                     double tol = 1e-4);

// Checks the loss compositions (supervised classification / location
// NLL, consistency classification, consistency location with constant
// and with tape-borne teacher means) at `configs` random inputs.
std::vector<SuiteResult> fd_loss_suite(uint64_t seed, int configs,
                                       double tol = 1e-4);

}  // namespace ugdet
