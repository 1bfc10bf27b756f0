#pragma once

#include <functional>
#include <string>
#include <vector>

#include "oxygan/tape.hpp"

namespace oxygan::gradcheck {

// Central finite differences in f64 shadow mode against the tape's
// analytic gradients. f32 differences are too noisy to trust at the
// 1e-3 bound, hence the double-precision tape.

struct CheckResult {
  std::string op;
  double max_rel_err = 0.0;
  bool passed = false;
};

using BuildFn =
    std::function<TapeF64::Id(TapeF64& tape, const std::vector<TapeF64::Id>& inputs)>;

// `build` must construct the same scalar loss every call (reseed any RNG
// it uses internally). Returns the max relative error over every element
// of every input.
double max_rel_error(const BuildFn& build, const std::vector<TensorF64>& inputs, double eps);

// The full per-op suite behind the `gradcheck` CLI verb and acceptance
// criterion for gradient correctness.
std::vector<CheckResult> run_all(std::uint64_t seed, double eps = 1e-4, double tol = 1e-3);

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace oxygan::gradcheck
