#pragma once

#include <functional>
#include <vector>

#include "levelseg/ad/ops.hpp"

namespace levelseg::ad {

struct GradCheckReport {
  double max_rel_err = 0.0;
  size_t wrt = 0;           // input index where the max occurred
  int64_t coord = -1;       // coordinate within that input
  double analytic = 0.0;
  double central = 0.0;
};

/// Central-difference comparison for a scalar-valued function of several
/// array inputs. `f` must be pure: called once with tracked leaves for the
/// analytic gradient, then repeatedly with perturbed constants.
/// Per-coordinate error: |analytic - cd| / max(|analytic|, |cd|, 1e-8).
/// `coords[k]`, when non-null, restricts input k to a coordinate subset.
template <typename T>
GradCheckReport grad_check_multi(
    const std::function<Value<T>(const std::vector<Value<T>>&)>& f,
    const std::vector<Tensor<T>>& inputs, T h,
    const std::vector<std::vector<int64_t>>* coords = nullptr);

/// Single-input convenience form; returns the max relative error.
template <typename T>
double grad_check(const std::function<Value<T>(const Value<T>&)>& f, const Tensor<T>& x,
                  T h);

}  // namespace levelseg::ad
