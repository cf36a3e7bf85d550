#pragma once

#include <functional>
#include <span>
#include <vector>

#include "sbir/tensor.hpp"

namespace sbir {

/// Builds a scalar loss from the given inputs. The inputs arrive watched on
/// the tape for the analytic pass and as plain constants for the value-only
/// probes, so the function must treat them uniformly (just apply ops).
using LossFn = std::function<Tensor(Tape&, std::span<const Tensor>)>;

struct FdReport {
  double max_rel_err = 0.0;
  bool pass = false;
  std::size_t checked = 0;  // number of input elements compared
};

/// Compares the analytic gradient of loss_fn against central finite
/// differences, elementwise over every input. Relative error uses a
/// max(|analytic|, |numeric|, 1e-8) denominator; pass iff the max is within
/// tolerance. loss_fn must be deterministic.
///
/// Inputs sitting within ~10x step of a nondifferentiable point (ReLU at 0,
/// Huber at +-delta, max ties, the distance root at 0) produce meaningless
/// central differences; callers are expected to keep probe points away from
/// those kinks.
FdReport finite_diff_check(const LossFn& loss_fn,
                           const std::vector<Tensor>& inputs, double step,
                           double tolerance);

}  // namespace sbir
