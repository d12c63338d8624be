#include <algorithm>
#include <cmath>

#include "ops_common.hpp"

namespace levelseg::ad {

using detail::make_value;

namespace {

// Separable box SUM over clamped windows, one 2D plane at a time.
template <typename T>
void box_sum_plane(const T* x, T* out, T* tmp, int h, int w, int r) {
  for (int i = 0; i < h; ++i) {
    const T* row = x + static_cast<int64_t>(i) * w;
    T* trow = tmp + static_cast<int64_t>(i) * w;
    for (int j = 0; j < w; ++j) {
      const int j0 = std::max(j - r, 0), j1 = std::min(j + r, w - 1);
      T acc = T(0);
      for (int jj = j0; jj <= j1; ++jj) acc += row[jj];
      trow[j] = acc;
    }
  }
  for (int j = 0; j < w; ++j) {
    for (int i = 0; i < h; ++i) {
      const int i0 = std::max(i - r, 0), i1 = std::min(i + r, h - 1);
      T acc = T(0);
      for (int ii = i0; ii <= i1; ++ii) acc += tmp[static_cast<int64_t>(ii) * w + j];
      out[static_cast<int64_t>(i) * w + j] = acc;
    }
  }
}

inline int window_count_1d(int i, int n, int r) {
  return std::min(i + r, n - 1) - std::max(i - r, 0) + 1;
}

template <typename T>
void require_spatial(const Value<T>& x, const char* op) {
  if (x.shape().rank < 2)
    throw ShapeError(std::string(op) + ": rank >= 2 required, got " + x.shape().str());
}

}  // namespace

template <typename T>
Value<T> box_filter_masked(const Value<T>& x, int radius) {
  require_spatial(x, "box_filter_masked");
  const int h = x.shape().height(), w = x.shape().width();
  if (radius < 1)
    throw ShapeError("box_filter_masked: radius must be >= 1, got " + std::to_string(radius));
  if (radius >= std::min(h, w))
    throw ShapeError("box_filter_masked: radius " + std::to_string(radius) +
                     " >= min spatial dim of " + x.shape().str());
  const int64_t planes = x.shape().planes();
  const int64_t plane = static_cast<int64_t>(h) * w;

  Tensor<T> out(x.shape());
  std::vector<T> tmp(plane);
  for (int64_t p = 0; p < planes; ++p) {
    box_sum_plane(x.tensor().data.data() + p * plane, out.data.data() + p * plane,
                  tmp.data(), h, w, radius);
    T* o = out.data.data() + p * plane;
    for (int i = 0; i < h; ++i) {
      const T rc = static_cast<T>(window_count_1d(i, h, radius));
      for (int j = 0; j < w; ++j)
        o[static_cast<int64_t>(i) * w + j] /=
            rc * static_cast<T>(window_count_1d(j, w, radius));
    }
  }

  Tape<T>* tape = x.tape();
  if (!tape) return Value<T>::constant(std::move(out));
  const int ix = x.node();
  const Shape xs = x.shape();
  // Transpose of diag(1/count) . box_sum: divide first, then box-sum.
  auto fn = [ix, xs, h, w, radius, planes, plane](const Tensor<T>& g, Gradients<T>& grads) {
    Tensor<T>& gx = grads.slot(ix, xs);
    std::vector<T> scaled(plane), tmp(plane), acc(plane);
    for (int64_t p = 0; p < planes; ++p) {
      const T* gp = g.data.data() + p * plane;
      for (int i = 0; i < h; ++i) {
        const T rc = static_cast<T>(window_count_1d(i, h, radius));
        for (int j = 0; j < w; ++j)
          scaled[static_cast<int64_t>(i) * w + j] =
              gp[static_cast<int64_t>(i) * w + j] /
              (rc * static_cast<T>(window_count_1d(j, w, radius)));
      }
      box_sum_plane(scaled.data(), acc.data(), tmp.data(), h, w, radius);
      T* dst = gx.data.data() + p * plane;
      for (int64_t i = 0; i < plane; ++i) dst[i] += acc[i];
    }
  };
  return make_value(tape, std::move(out), {ix}, std::move(fn));
}

template <typename T>
Value<T> central_diff(const Value<T>& x, Axis axis) {
  require_spatial(x, "central_diff");
  const int h = x.shape().height(), w = x.shape().width();
  const int64_t planes = x.shape().planes();
  const int64_t plane = static_cast<int64_t>(h) * w;

  Tensor<T> out(x.shape());
  for (int64_t p = 0; p < planes; ++p) {
    const T* xp = x.tensor().data.data() + p * plane;
    T* o = out.data.data() + p * plane;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        int64_t hi, lo;
        if (axis == Axis::Rows) {
          hi = static_cast<int64_t>(std::min(i + 1, h - 1)) * w + j;
          lo = static_cast<int64_t>(std::max(i - 1, 0)) * w + j;
        } else {
          hi = static_cast<int64_t>(i) * w + std::min(j + 1, w - 1);
          lo = static_cast<int64_t>(i) * w + std::max(j - 1, 0);
        }
        o[static_cast<int64_t>(i) * w + j] = T(0.5) * (xp[hi] - xp[lo]);
      }
  }

  Tape<T>* tape = x.tape();
  if (!tape) return Value<T>::constant(std::move(out));
  const int ix = x.node();
  const Shape xs = x.shape();
  auto fn = [ix, xs, axis, h, w, planes, plane](const Tensor<T>& g, Gradients<T>& grads) {
    Tensor<T>& gx = grads.slot(ix, xs);
    for (int64_t p = 0; p < planes; ++p) {
      const T* gp = g.data.data() + p * plane;
      T* dst = gx.data.data() + p * plane;
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          const T gv = T(0.5) * gp[static_cast<int64_t>(i) * w + j];
          int64_t hi, lo;
          if (axis == Axis::Rows) {
            hi = static_cast<int64_t>(std::min(i + 1, h - 1)) * w + j;
            lo = static_cast<int64_t>(std::max(i - 1, 0)) * w + j;
          } else {
            hi = static_cast<int64_t>(i) * w + std::min(j + 1, w - 1);
            lo = static_cast<int64_t>(i) * w + std::max(j - 1, 0);
          }
          dst[hi] += gv;
          dst[lo] -= gv;
        }
    }
  };
  return make_value(tape, std::move(out), {ix}, std::move(fn));
}

template <typename T>
Value<T> avg_pool2(const Value<T>& x) {
  require_spatial(x, "avg_pool2");
  const int h = x.shape().height(), w = x.shape().width();
  if (h % 2 != 0 || w % 2 != 0)
    throw ShapeError("avg_pool2: spatial dims must be even, got " + x.shape().str());
  Shape os = x.shape();
  os.d[os.rank - 2] = h / 2;
  os.d[os.rank - 1] = w / 2;
  const int oh = h / 2, ow = w / 2;
  const int64_t planes = x.shape().planes();
  const int64_t iplane = static_cast<int64_t>(h) * w;
  const int64_t oplane = static_cast<int64_t>(oh) * ow;

  Tensor<T> out(os);
  for (int64_t p = 0; p < planes; ++p) {
    const T* xp = x.tensor().data.data() + p * iplane;
    T* o = out.data.data() + p * oplane;
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        const int64_t r0 = static_cast<int64_t>(2 * i) * w + 2 * j;
        o[static_cast<int64_t>(i) * ow + j] =
            (xp[r0] + xp[r0 + 1] + xp[r0 + w] + xp[r0 + w + 1]) * T(0.25);
      }
  }

  Tape<T>* tape = x.tape();
  if (!tape) return Value<T>::constant(std::move(out));
  const int ix = x.node();
  const Shape xs = x.shape();
  auto fn = [ix, xs, oh, ow, w, planes, iplane, oplane](const Tensor<T>& g, Gradients<T>& grads) {
    Tensor<T>& gx = grads.slot(ix, xs);
    for (int64_t p = 0; p < planes; ++p) {
      const T* gp = g.data.data() + p * oplane;
      T* dst = gx.data.data() + p * iplane;
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          const T gv = gp[static_cast<int64_t>(i) * ow + j] * T(0.25);
          const int64_t r0 = static_cast<int64_t>(2 * i) * w + 2 * j;
          dst[r0] += gv;
          dst[r0 + 1] += gv;
          dst[r0 + w] += gv;
          dst[r0 + w + 1] += gv;
        }
    }
  };
  return make_value(tape, std::move(out), {ix}, std::move(fn));
}

namespace {

// Half-pixel source mapping for x2 upsampling: src = (dst + 0.5)/2 - 0.5,
// clamped to the border.
template <typename T>
void up2_axis_table(int n_out, int n_in, std::vector<int>& i0, std::vector<int>& i1,
                    std::vector<T>& frac) {
  i0.resize(n_out);
  i1.resize(n_out);
  frac.resize(n_out);
  for (int o = 0; o < n_out; ++o) {
    double s = (o + 0.5) / 2.0 - 0.5;
    s = std::min(std::max(s, 0.0), static_cast<double>(n_in - 1));
    const int lo = static_cast<int>(std::floor(s));
    i0[o] = lo;
    i1[o] = std::min(lo + 1, n_in - 1);
    frac[o] = static_cast<T>(s - lo);
  }
}

}  // namespace

template <typename T>
Value<T> upsample_bilinear2(const Value<T>& x) {
  require_spatial(x, "upsample_bilinear2");
  const int h = x.shape().height(), w = x.shape().width();
  const int oh = 2 * h, ow = 2 * w;
  Shape os = x.shape();
  os.d[os.rank - 2] = oh;
  os.d[os.rank - 1] = ow;
  const int64_t planes = x.shape().planes();
  const int64_t iplane = static_cast<int64_t>(h) * w;
  const int64_t oplane = static_cast<int64_t>(oh) * ow;

  std::vector<int> y0, y1, x0, x1;
  std::vector<T> fy, fx;
  up2_axis_table<T>(oh, h, y0, y1, fy);
  up2_axis_table<T>(ow, w, x0, x1, fx);

  Tensor<T> out(os);
  for (int64_t p = 0; p < planes; ++p) {
    const T* xp = x.tensor().data.data() + p * iplane;
    T* o = out.data.data() + p * oplane;
    for (int i = 0; i < oh; ++i) {
      const T wy1 = fy[i], wy0 = T(1) - wy1;
      const int64_t r0 = static_cast<int64_t>(y0[i]) * w;
      const int64_t r1 = static_cast<int64_t>(y1[i]) * w;
      for (int j = 0; j < ow; ++j) {
        const T wx1 = fx[j], wx0 = T(1) - wx1;
        o[static_cast<int64_t>(i) * ow + j] =
            wy0 * (wx0 * xp[r0 + x0[j]] + wx1 * xp[r0 + x1[j]]) +
            wy1 * (wx0 * xp[r1 + x0[j]] + wx1 * xp[r1 + x1[j]]);
      }
    }
  }

  Tape<T>* tape = x.tape();
  if (!tape) return Value<T>::constant(std::move(out));
  const int ix = x.node();
  const Shape xs = x.shape();
  auto fn = [ix, xs, y0, y1, x0, x1, fy, fx, oh, ow, w, planes, iplane,
             oplane](const Tensor<T>& g, Gradients<T>& grads) {
    Tensor<T>& gx = grads.slot(ix, xs);
    for (int64_t p = 0; p < planes; ++p) {
      const T* gp = g.data.data() + p * oplane;
      T* dst = gx.data.data() + p * iplane;
      for (int i = 0; i < oh; ++i) {
        const T wy1 = fy[i], wy0 = T(1) - wy1;
        const int64_t r0 = static_cast<int64_t>(y0[i]) * w;
        const int64_t r1 = static_cast<int64_t>(y1[i]) * w;
        for (int j = 0; j < ow; ++j) {
          const T gv = gp[static_cast<int64_t>(i) * ow + j];
          const T wx1 = fx[j], wx0 = T(1) - wx1;
          dst[r0 + x0[j]] += gv * wy0 * wx0;
          dst[r0 + x1[j]] += gv * wy0 * wx1;
          dst[r1 + x0[j]] += gv * wy1 * wx0;
          dst[r1 + x1[j]] += gv * wy1 * wx1;
        }
      }
    }
  };
  return make_value(tape, std::move(out), {ix}, std::move(fn));
}

template <typename T>
Value<T> resize(const Value<T>& x, int factor_log2, bool up) {
  if (factor_log2 < 0)
    throw ShapeError("resize: factor_log2 must be >= 0, got " + std::to_string(factor_log2));
  Value<T> v = x;
  for (int k = 0; k < factor_log2; ++k) v = up ? upsample_bilinear2(v) : avg_pool2(v);
  return v;
}

#define LEVELSEG_INSTANTIATE(T)                                         \
  template Value<T> box_filter_masked<T>(const Value<T>&, int);         \
  template Value<T> central_diff<T>(const Value<T>&, Axis);             \
  template Value<T> avg_pool2<T>(const Value<T>&);                      \
  template Value<T> upsample_bilinear2<T>(const Value<T>&);             \
  template Value<T> resize<T>(const Value<T>&, int, bool);

LEVELSEG_INSTANTIATE(float)
LEVELSEG_INSTANTIATE(double)
#undef LEVELSEG_INSTANTIATE

}  // namespace levelseg::ad
