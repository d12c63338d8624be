#include "levelseg/acm/acm.hpp"

#include <cmath>

namespace levelseg::acm {

using namespace levelseg::ad;

void AcmConfig::validate() const {
  if (mu < 0) throw ConfigError("acm: mu must be >= 0");
  if (eps <= 0) throw ConfigError("acm: eps must be > 0");
  if (dt <= 0) throw ConfigError("acm: dt must be > 0");
  if (window_radius < 1) throw ConfigError("acm: window radius must be >= 1");
  if (band_half_width < 1) throw ConfigError("acm: band half-width must be >= 1");
  if (steps < 1) throw ConfigError("acm: step count must be >= 1");
}

template <typename T>
Value<T> heaviside_eps(const Value<T>& phi, T eps) {
  return affine(arctan(mul_scalar(phi, T(1) / eps)), T(M_1_PI), T(0.5));
}

template <typename T>
Value<T> dirac_eps(const Value<T>& phi, T eps) {
  // eps^2 + phi^2 >= eps^2 > 0, so the division guard stays inert.
  Value<T> denom = add_scalar(square(phi), eps * eps);
  return mul_scalar(div_guarded(Value<T>::scalar(T(1)), denom), eps * T(M_1_PI));
}

template <typename T>
Value<T> gradient_magnitude(const Value<T>& phi) {
  Value<T> gx = central_diff(phi, Axis::Cols);
  Value<T> gy = central_diff(phi, Axis::Rows);
  return sqrt_guarded(add(square(gx), square(gy)));
}

template <typename T>
Value<T> curvature(const Value<T>& phi) {
  Value<T> gx = central_diff(phi, Axis::Cols);
  Value<T> gy = central_diff(phi, Axis::Rows);
  Value<T> mag = add_scalar(sqrt_guarded(add(square(gx), square(gy))),
                            static_cast<T>(kGuard));
  Value<T> nx = div_guarded(gx, mag);
  Value<T> ny = div_guarded(gy, mag);
  return add(central_diff(nx, Axis::Cols), central_diff(ny, Axis::Rows));
}

namespace {

template <typename T>
RegionMeans<T> means_from_heaviside(const Value<T>& image, const Value<T>& h,
                                    int radius, bool stop_grad) {
  Value<T> h_out = affine(h, T(-1), T(1));
  const T eta = static_cast<T>(kGuard);
  Value<T> m1 = div_guarded(box_filter_masked(mul(image, h), radius),
                            add_scalar(box_filter_masked(h, radius), eta));
  Value<T> m2 = div_guarded(box_filter_masked(mul(image, h_out), radius),
                            add_scalar(box_filter_masked(h_out, radius), eta));
  if (stop_grad) {
    m1 = stop_gradient(m1);
    m2 = stop_gradient(m2);
  }
  return {m1, m2};
}

}  // namespace

template <typename T>
RegionMeans<T> local_region_means(const Value<T>& image, const Value<T>& phi, T eps,
                                  int radius) {
  if (image.shape() != phi.shape())
    throw ShapeError("local_region_means: image " + image.shape().str() + " vs phi " +
                     phi.shape().str());
  return means_from_heaviside(image, heaviside_eps(phi, eps), radius, false);
}

template <typename T>
Value<T> energy(const Value<T>& image, const Value<T>& phi, const Value<T>& lambda1,
                const Value<T>& lambda2, const AcmConfig& cfg) {
  cfg.validate();
  const T eps = static_cast<T>(cfg.eps);
  Value<T> h = heaviside_eps(phi, eps);
  Value<T> d = dirac_eps(phi, eps);
  RegionMeans<T> m =
      means_from_heaviside(image, h, cfg.window_radius, cfg.stop_gradient_means);

  Value<T> e = mul_scalar(sum(mul(d, gradient_magnitude(phi))), static_cast<T>(cfg.mu));
  if (cfg.nu != 0) e = add(e, mul_scalar(sum(h), static_cast<T>(cfg.nu)));
  e = add(e, sum(mul(lambda1, mul(square(sub(image, m.m1)), h))));
  e = add(e, sum(mul(lambda2, mul(square(sub(image, m.m2)), affine(h, T(-1), T(1))))));
  return e;
}

namespace {

template <typename T>
void require_finite(const Tensor<T>& t, const char* where) {
  const int w = t.shape.width();
  for (int64_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(t.data[i])) {
      const int64_t in_plane = i % (static_cast<int64_t>(t.shape.height()) * w);
      throw NumericError(std::string(where) + ": non-finite value at pixel (" +
                         std::to_string(in_plane / w) + "," + std::to_string(in_plane % w) +
                         ") of " + t.shape.str());
    }
  }
}

}  // namespace

template <typename T>
Value<T> acm_step(const Value<T>& phi, const Value<T>& image, const Value<T>& lambda1,
                  const Value<T>& lambda2, const AcmConfig& cfg,
                  const Tensor<T>* band_mask) {
  if (image.shape() != phi.shape())
    throw ShapeError("acm_step: image " + image.shape().str() + " vs phi " +
                     phi.shape().str());
  const T eps = static_cast<T>(cfg.eps);
  Value<T> h = heaviside_eps(phi, eps);
  RegionMeans<T> m =
      means_from_heaviside(image, h, cfg.window_radius, cfg.stop_gradient_means);

  Value<T> force = sub(mul(lambda2, square(sub(image, m.m2))),
                       mul(lambda1, square(sub(image, m.m1))));
  if (cfg.mu != 0) force = add(force, mul_scalar(curvature(phi), static_cast<T>(cfg.mu)));
  if (cfg.nu != 0) force = add_scalar(force, static_cast<T>(-cfg.nu));

  Value<T> update = mul_scalar(mul(dirac_eps(phi, eps), force), static_cast<T>(cfg.dt));
  if (band_mask) {
    if (band_mask->shape != phi.shape())
      throw ShapeError("acm_step: band mask " + band_mask->shape.str() + " vs phi " +
                       phi.shape().str());
    update = mul(update, Value<T>::constant(*band_mask));
  }
  Value<T> next = add(phi, update);
  require_finite(next.tensor(), "acm_step");
  return next;
}

template <typename T>
Tensor<T> narrow_band_mask(const Tensor<T>& phi, double band_half_width) {
  if (band_half_width < 1) throw ConfigError("narrow_band_mask: width must be >= 1");
  Tensor<T> mask(phi.shape);
  for (int64_t i = 0; i < phi.numel(); ++i)
    mask.data[i] = std::abs(static_cast<double>(phi.data[i])) < band_half_width ? T(1) : T(0);
  return mask;
}

template <typename T>
Value<T> evolve(const Value<T>& phi0, const Value<T>& image, const Value<T>& lambda1,
                const Value<T>& lambda2, const AcmConfig& cfg, EvolveMode mode,
                const std::function<void(int, const Value<T>&)>& observer) {
  cfg.validate();
  Value<T> phi = phi0;
  for (int t = 1; t <= cfg.steps; ++t) {
    if (mode == EvolveMode::Eval) {
      Tensor<T> mask = narrow_band_mask(phi.tensor(), cfg.band_half_width);
      phi = acm_step(phi, image, lambda1, lambda2, cfg, &mask);
    } else {
      phi = acm_step(phi, image, lambda1, lambda2, cfg);
    }
    if (observer) observer(t, phi);
  }
  return phi;
}

template <typename T>
Value<T> logits_from_levelset(const Value<T>& phi) {
  return sigmoid(phi);
}

#define LEVELSEG_INSTANTIATE(T)                                                          \
  template Value<T> heaviside_eps<T>(const Value<T>&, T);                                \
  template Value<T> dirac_eps<T>(const Value<T>&, T);                                    \
  template Value<T> gradient_magnitude<T>(const Value<T>&);                              \
  template Value<T> curvature<T>(const Value<T>&);                                       \
  template RegionMeans<T> local_region_means<T>(const Value<T>&, const Value<T>&, T,     \
                                                int);                                    \
  template Value<T> energy<T>(const Value<T>&, const Value<T>&, const Value<T>&,         \
                              const Value<T>&, const AcmConfig&);                        \
  template Value<T> acm_step<T>(const Value<T>&, const Value<T>&, const Value<T>&,       \
                                const Value<T>&, const AcmConfig&, const Tensor<T>*);    \
  template Tensor<T> narrow_band_mask<T>(const Tensor<T>&, double);                      \
  template Value<T> evolve<T>(const Value<T>&, const Value<T>&, const Value<T>&,         \
                              const Value<T>&, const AcmConfig&, EvolveMode,             \
                              const std::function<void(int, const Value<T>&)>&);         \
  template Value<T> logits_from_levelset<T>(const Value<T>&);

LEVELSEG_INSTANTIATE(float)
LEVELSEG_INSTANTIATE(double)
#undef LEVELSEG_INSTANTIATE

}  // namespace levelseg::acm
