#pragma once

#include <functional>

#include "levelseg/ad/ops.hpp"

namespace levelseg::acm {

using ad::Tensor;
using ad::Value;

// The contour is the zero level set of phi; the interior is phi > 0, so the
// smoothed Heaviside marks the interior and sigmoid(phi) is the foreground
// probability. Fields are rank-2 grids or rank-4 [B,1,H,W] stacks; every
// routine here works on either.

struct AcmConfig {
  double mu = 0.2;          // contour length penalty
  double nu = 0.0;          // enclosed area penalty
  double eps = 1.0;         // Heaviside smoothing width, pixels
  double dt = 0.5;          // explicit timestep
  int window_radius = 5;    // local-mean window radius, pixels
  int band_half_width = 8;  // narrow band half-width, pixels
  int steps = 60;           // evolution iterations N
  // When set, region means are treated as constants during backprop.
  bool stop_gradient_means = false;

  void validate() const;
};

template <typename T>
struct RegionMeans {
  Value<T> m1;  // local mean intensity inside the contour
  Value<T> m2;  // outside
};

/// H_eps(phi) = 1/2 + (1/pi) atan(phi / eps), in (0,1).
template <typename T>
Value<T> heaviside_eps(const Value<T>& phi, T eps);

/// delta_eps(phi) = (1/pi) eps / (eps^2 + phi^2), the derivative of H_eps.
template <typename T>
Value<T> dirac_eps(const Value<T>& phi, T eps);

/// |grad phi| from central differences with replicate boundaries.
template <typename T>
Value<T> gradient_magnitude(const Value<T>& phi);

/// div(grad phi / |grad phi|), guarded against vanishing gradients.
template <typename T>
Value<T> curvature(const Value<T>& phi);

/// Window-averaged interior/exterior intensities, Heaviside-weighted:
/// m1 = box(I.H) / (box(H) + eta), m2 the complement. Fully on-tape.
template <typename T>
RegionMeans<T> local_region_means(const Value<T>& image, const Value<T>& phi, T eps,
                                  int radius);

/// Contour energy: sum over pixels of
///   mu delta|grad phi| + nu H + lambda1 (I-m1)^2 H + lambda2 (I-m2)^2 (1-H).
template <typename T>
Value<T> energy(const Value<T>& image, const Value<T>& phi, const Value<T>& lambda1,
                const Value<T>& lambda2, const AcmConfig& cfg);

/// One explicit step of the descent PDE
///   phi' = phi + dt . delta(phi) [ mu k - nu - lambda1 (I-m1)^2 + lambda2 (I-m2)^2 ],
/// means recomputed from phi. With band_mask given (eval mode), the update is
/// applied only where the mask is 1. Throws NumericError naming the first
/// non-finite pixel if the update blows up.
template <typename T>
Value<T> acm_step(const Value<T>& phi, const Value<T>& image, const Value<T>& lambda1,
                  const Value<T>& lambda2, const AcmConfig& cfg,
                  const Tensor<T>* band_mask = nullptr);

/// mask = (|phi| < band_half_width), as 0/1 values.
template <typename T>
Tensor<T> narrow_band_mask(const Tensor<T>& phi, double band_half_width);

enum class EvolveMode {
  Train,  // full-grid updates, differentiable end to end
  Eval    // narrow-band updates, band recomputed every step
};

/// cfg.steps composed acm_steps. The optional observer sees phi after every
/// step (step index is 1-based).
template <typename T>
Value<T> evolve(const Value<T>& phi0, const Value<T>& image, const Value<T>& lambda1,
                const Value<T>& lambda2, const AcmConfig& cfg, EvolveMode mode,
                const std::function<void(int, const Value<T>&)>& observer = nullptr);

/// Per-pixel sigmoid(phi); thresholding at 0.5 recovers the phi > 0 mask.
template <typename T>
Value<T> logits_from_levelset(const Value<T>& phi);

}  // namespace levelseg::acm
