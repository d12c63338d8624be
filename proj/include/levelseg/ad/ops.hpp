#pragma once

#include <vector>

#include "levelseg/ad/tape.hpp"

namespace levelseg::ad {

/// Guard added to denominators and other normalization sites.
inline constexpr double kGuard = 1e-8;

// ---- elementwise -----------------------------------------------------------
// Binary ops accept equal shapes or one scalar (1-element) operand.
// Shape mismatches raise ShapeError naming both shapes.

template <typename T> Value<T> add(const Value<T>& a, const Value<T>& b);
template <typename T> Value<T> sub(const Value<T>& a, const Value<T>& b);
template <typename T> Value<T> mul(const Value<T>& a, const Value<T>& b);
/// a / (b + kGuard * sign(b)), finite for b = 0. sign(0) taken as +1.
template <typename T> Value<T> div_guarded(const Value<T>& a, const Value<T>& b);

/// scale * x + offset in one node.
template <typename T> Value<T> affine(const Value<T>& x, T scale, T offset);
template <typename T> Value<T> add_scalar(const Value<T>& x, T c);
template <typename T> Value<T> mul_scalar(const Value<T>& x, T c);
template <typename T> Value<T> neg(const Value<T>& x);

template <typename T> Value<T> square(const Value<T>& x);
/// sqrt(max(x, 0)); backward guarded by kGuard at x = 0.
template <typename T> Value<T> sqrt_guarded(const Value<T>& x);
template <typename T> Value<T> arctan(const Value<T>& x);
template <typename T> Value<T> sigmoid(const Value<T>& x);
template <typename T> Value<T> relu(const Value<T>& x);
template <typename T> Value<T> softplus(const Value<T>& x);
/// min(max(x, lo), hi); gradient passes where lo <= x <= hi.
template <typename T> Value<T> clamp(const Value<T>& x, T lo, T hi);

// ---- structure --------------------------------------------------------------

/// Fill `shape` with the single element of s; backward sums the gradient.
template <typename T> Value<T> broadcast_to(const Value<T>& s, const Shape& shape);
template <typename T> Value<T> sum(const Value<T>& x);
template <typename T> Value<T> mean(const Value<T>& x);
/// Concatenate rank-4 tensors along the channel axis.
template <typename T> Value<T> concat_channels(const std::vector<Value<T>>& xs);
/// Same buffer, detached from the tape.
template <typename T> Value<T> stop_gradient(const Value<T>& x);

// ---- spatial ----------------------------------------------------------------
// Spatial ops act on the trailing two dims; leading dims are independent
// planes, so rank-2 fields and rank-4 activations share one code path.

/// Windowed average normalized by the in-bounds pixel count, so edges carry
/// no zero-padding bias. Backward is the exact transpose.
template <typename T> Value<T> box_filter_masked(const Value<T>& x, int radius);

enum class Axis { Rows, Cols };
/// Central difference with replicate (clamped) boundaries, spacing 1.
template <typename T> Value<T> central_diff(const Value<T>& x, Axis axis);

/// 2x2 average pooling; spatial dims must be even.
template <typename T> Value<T> avg_pool2(const Value<T>& x);
/// x2 bilinear upsampling, half-pixel centers, clamped borders.
template <typename T> Value<T> upsample_bilinear2(const Value<T>& x);
/// Repeated x2 resize, `factor_log2` times, up (bilinear) or down (average).
template <typename T> Value<T> resize(const Value<T>& x, int factor_log2, bool up);

// ---- network ----------------------------------------------------------------

/// Cross-correlation with zero padding dilation*(k-1)/2 ("same" at stride 1).
/// x: [B,Cin,H,W], w: [Cout,Cin,k,k] with k odd, b: [Cout].
template <typename T>
Value<T> conv2d(const Value<T>& x, const Value<T>& w, const Value<T>& b,
                int dilation = 1, int stride = 1);

template <typename T>
struct RunningStats {
  Tensor<T> mean;  // [C], starts at 0
  Tensor<T> var;   // [C], starts at 1
  explicit RunningStats(int channels = 0)
      : mean(Shape{channels}, T(0)), var(Shape{channels}, T(1)) {}
};

enum class BnMode { Train, Eval };

/// Train mode normalizes by batch statistics and updates `rs` off-tape;
/// eval mode normalizes by `rs`. Differentiable w.r.t. x, gamma, beta.
template <typename T>
Value<T> batch_norm(const Value<T>& x, const Value<T>& gamma, const Value<T>& beta,
                    RunningStats<T>& rs, BnMode mode, T momentum = T(0.9),
                    T eps = T(1e-5));

// ---- sugar ------------------------------------------------------------------

template <typename T> Value<T> operator+(const Value<T>& a, const Value<T>& b) { return add(a, b); }
template <typename T> Value<T> operator-(const Value<T>& a, const Value<T>& b) { return sub(a, b); }
template <typename T> Value<T> operator*(const Value<T>& a, const Value<T>& b) { return mul(a, b); }
template <typename T> Value<T> operator-(const Value<T>& x) { return neg(x); }

}  // namespace levelseg::ad
