#include <cmath>

#include "ops_common.hpp"

namespace levelseg::ad {

using detail::make_value;
using detail::tracked_ids;

namespace {

struct ConvGeom {
  int b, cin, h, w, cout, k, dil, stride, pad, oh, ow;
};

template <typename T>
ConvGeom conv_geometry(const Value<T>& x, const Value<T>& w, int dilation, int stride) {
  if (x.shape().rank != 4 || w.shape().rank != 4)
    throw ShapeError("conv2d: rank-4 input and kernel required, got " + x.shape().str() +
                     " and " + w.shape().str());
  ConvGeom g;
  g.b = x.shape().d[0];
  g.cin = x.shape().d[1];
  g.h = x.shape().d[2];
  g.w = x.shape().d[3];
  g.cout = w.shape().d[0];
  g.k = w.shape().d[2];
  if (w.shape().d[1] != g.cin)
    throw ShapeError("conv2d: channel mismatch, input " + x.shape().str() + " vs kernel " +
                     w.shape().str());
  if (w.shape().d[3] != g.k || g.k % 2 == 0)
    throw ShapeError("conv2d: kernel must be square with odd size, got " + w.shape().str());
  if (dilation < 1 || stride < 1)
    throw ShapeError("conv2d: dilation and stride must be positive");
  g.dil = dilation;
  g.stride = stride;
  g.pad = dilation * (g.k - 1) / 2;
  g.oh = (g.h + 2 * g.pad - dilation * (g.k - 1) - 1) / stride + 1;
  g.ow = (g.w + 2 * g.pad - dilation * (g.k - 1) - 1) / stride + 1;
  return g;
}

// Forward kernel. Each output element is one fixed-order reduction, so the
// result is identical for any thread count.
template <typename T>
void conv_forward(const ConvGeom& g, const T* x, const T* w, const T* bias, T* out) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < g.b; ++b)
    for (int co = 0; co < g.cout; ++co) {
      const int64_t obase = (static_cast<int64_t>(b) * g.cout + co) * g.oh * g.ow;
      for (int oy = 0; oy < g.oh; ++oy)
        for (int ox = 0; ox < g.ow; ++ox) {
          T acc = bias[co];
          for (int ci = 0; ci < g.cin; ++ci) {
            const int64_t xbase = (static_cast<int64_t>(b) * g.cin + ci) * g.h * g.w;
            const int64_t wbase = ((static_cast<int64_t>(co) * g.cin + ci) * g.k) * g.k;
            for (int ky = 0; ky < g.k; ++ky) {
              const int iy = oy * g.stride - g.pad + ky * g.dil;
              if (iy < 0 || iy >= g.h) continue;
              for (int kx = 0; kx < g.k; ++kx) {
                const int ix = ox * g.stride - g.pad + kx * g.dil;
                if (ix < 0 || ix >= g.w) continue;
                acc += x[xbase + static_cast<int64_t>(iy) * g.w + ix] *
                       w[wbase + static_cast<int64_t>(ky) * g.k + kx];
              }
            }
          }
          out[obase + static_cast<int64_t>(oy) * g.ow + ox] = acc;
        }
    }
}

// Gather-form input gradient: every input element owns its reduction.
template <typename T>
void conv_backward_x(const ConvGeom& g, const T* gout, const T* w, T* gx) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < g.b; ++b)
    for (int ci = 0; ci < g.cin; ++ci) {
      const int64_t xbase = (static_cast<int64_t>(b) * g.cin + ci) * g.h * g.w;
      for (int iy = 0; iy < g.h; ++iy)
        for (int ix = 0; ix < g.w; ++ix) {
          T acc = T(0);
          for (int co = 0; co < g.cout; ++co) {
            const int64_t obase = (static_cast<int64_t>(b) * g.cout + co) * g.oh * g.ow;
            const int64_t wbase = ((static_cast<int64_t>(co) * g.cin + ci) * g.k) * g.k;
            for (int ky = 0; ky < g.k; ++ky) {
              const int oy_num = iy + g.pad - ky * g.dil;
              if (oy_num < 0 || oy_num % g.stride != 0) continue;
              const int oy = oy_num / g.stride;
              if (oy >= g.oh) continue;
              for (int kx = 0; kx < g.k; ++kx) {
                const int ox_num = ix + g.pad - kx * g.dil;
                if (ox_num < 0 || ox_num % g.stride != 0) continue;
                const int ox = ox_num / g.stride;
                if (ox >= g.ow) continue;
                acc += gout[obase + static_cast<int64_t>(oy) * g.ow + ox] *
                       w[wbase + static_cast<int64_t>(ky) * g.k + kx];
              }
            }
          }
          gx[xbase + static_cast<int64_t>(iy) * g.w + ix] += acc;
        }
    }
}

template <typename T>
void conv_backward_w(const ConvGeom& g, const T* gout, const T* x, T* gw) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int co = 0; co < g.cout; ++co)
    for (int ci = 0; ci < g.cin; ++ci)
      for (int ky = 0; ky < g.k; ++ky)
        for (int kx = 0; kx < g.k; ++kx) {
          T acc = T(0);
          for (int b = 0; b < g.b; ++b) {
            const int64_t obase = (static_cast<int64_t>(b) * g.cout + co) * g.oh * g.ow;
            const int64_t xbase = (static_cast<int64_t>(b) * g.cin + ci) * g.h * g.w;
            for (int oy = 0; oy < g.oh; ++oy) {
              const int iy = oy * g.stride - g.pad + ky * g.dil;
              if (iy < 0 || iy >= g.h) continue;
              for (int ox = 0; ox < g.ow; ++ox) {
                const int ix = ox * g.stride - g.pad + kx * g.dil;
                if (ix < 0 || ix >= g.w) continue;
                acc += gout[obase + static_cast<int64_t>(oy) * g.ow + ox] *
                       x[xbase + static_cast<int64_t>(iy) * g.w + ix];
              }
            }
          }
          gw[((static_cast<int64_t>(co) * g.cin + ci) * g.k + ky) * g.k + kx] += acc;
        }
}

}  // namespace

template <typename T>
Value<T> conv2d(const Value<T>& x, const Value<T>& w, const Value<T>& b, int dilation,
                int stride) {
  const ConvGeom geom = conv_geometry(x, w, dilation, stride);
  if (b.shape().rank != 1 || b.shape().d[0] != geom.cout)
    throw ShapeError("conv2d: bias shape " + b.shape().str() + " does not match kernel " +
                     w.shape().str());

  Tensor<T> out(Shape::nchw(geom.b, geom.cout, geom.oh, geom.ow));
  conv_forward(geom, x.tensor().data.data(), w.tensor().data.data(), b.tensor().data.data(),
               out.data.data());

  Tape<T>* tape = detail::common_tape<T>({&x, &w, &b});
  if (!tape) return Value<T>::constant(std::move(out));

  const int ix = x.node(), iw = w.node(), ib = b.node();
  auto sx = x.ptr();
  auto sw = w.ptr();
  auto fn = [geom, ix, iw, ib, sx, sw](const Tensor<T>& g, Gradients<T>& grads) {
    if (ix >= 0) {
      Tensor<T>& gx = grads.slot(ix, sx->shape);
      conv_backward_x(geom, g.data.data(), sw->data.data(), gx.data.data());
    }
    if (iw >= 0) {
      Tensor<T>& gw = grads.slot(iw, sw->shape);
      conv_backward_w(geom, g.data.data(), sx->data.data(), gw.data.data());
    }
    if (ib >= 0) {
      Tensor<T>& gb = grads.slot(ib, Shape{geom.cout});
      for (int co = 0; co < geom.cout; ++co) {
        T acc = T(0);
        for (int b = 0; b < geom.b; ++b) {
          const T* gp = g.data.data() + (static_cast<int64_t>(b) * geom.cout + co) *
                                            geom.oh * geom.ow;
          for (int64_t i = 0; i < static_cast<int64_t>(geom.oh) * geom.ow; ++i) acc += gp[i];
        }
        gb.data[co] += acc;
      }
    }
  };
  return make_value(tape, std::move(out), tracked_ids({ix, iw, ib}), std::move(fn));
}

template <typename T>
Value<T> batch_norm(const Value<T>& x, const Value<T>& gamma, const Value<T>& beta,
                    RunningStats<T>& rs, BnMode mode, T momentum, T eps) {
  if (x.shape().rank != 4)
    throw ShapeError("batch_norm: rank-4 input required, got " + x.shape().str());
  const int b = x.shape().d[0], c = x.shape().d[1], h = x.shape().d[2], w = x.shape().d[3];
  if (b < 1) throw ShapeError("batch_norm: zero batch");
  if (gamma.shape().numel() != c || beta.shape().numel() != c)
    throw ShapeError("batch_norm: gamma/beta of " + gamma.shape().str() + "/" +
                     beta.shape().str() + " do not match channels of " + x.shape().str());
  if (rs.mean.numel() != c)
    throw ShapeError("batch_norm: running stats channel count mismatch");

  const int64_t plane = static_cast<int64_t>(h) * w;
  const int64_t per_channel = static_cast<int64_t>(b) * plane;

  // Channel statistics: batch stats in train mode, running stats in eval.
  std::vector<T> mu(c), inv_std(c);
  const T* xp = x.tensor().data.data();
  if (mode == BnMode::Train) {
    for (int ci = 0; ci < c; ++ci) {
      T s = T(0);
      for (int bi = 0; bi < b; ++bi) {
        const T* p = xp + (static_cast<int64_t>(bi) * c + ci) * plane;
        for (int64_t i = 0; i < plane; ++i) s += p[i];
      }
      const T m = s / static_cast<T>(per_channel);
      T v = T(0);
      for (int bi = 0; bi < b; ++bi) {
        const T* p = xp + (static_cast<int64_t>(bi) * c + ci) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const T d = p[i] - m;
          v += d * d;
        }
      }
      v /= static_cast<T>(per_channel);
      mu[ci] = m;
      inv_std[ci] = T(1) / std::sqrt(v + eps);
      rs.mean.data[ci] = momentum * rs.mean.data[ci] + (T(1) - momentum) * m;
      rs.var.data[ci] = momentum * rs.var.data[ci] + (T(1) - momentum) * v;
    }
  } else {
    for (int ci = 0; ci < c; ++ci) {
      mu[ci] = rs.mean.data[ci];
      inv_std[ci] = T(1) / std::sqrt(rs.var.data[ci] + eps);
    }
  }

  Tensor<T> out(x.shape());
  auto xhat = std::make_shared<Tensor<T>>(x.shape());
  const T* gp = gamma.tensor().data.data();
  const T* bp = beta.tensor().data.data();
  for (int bi = 0; bi < b; ++bi)
    for (int ci = 0; ci < c; ++ci) {
      const int64_t base = (static_cast<int64_t>(bi) * c + ci) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        const T xh = (xp[base + i] - mu[ci]) * inv_std[ci];
        xhat->data[base + i] = xh;
        out.data[base + i] = gp[ci] * xh + bp[ci];
      }
    }

  Tape<T>* tape = detail::common_tape<T>({&x, &gamma, &beta});
  if (!tape) return Value<T>::constant(std::move(out));

  const int ix = x.node(), ig = gamma.node(), ibt = beta.node();
  auto sg = gamma.ptr();
  const Shape xs = x.shape();
  const bool train = mode == BnMode::Train;
  auto fn = [ix, ig, ibt, sg, xhat, inv_std, xs, b, c, plane, per_channel,
             train](const Tensor<T>& g, Gradients<T>& grads) {
    for (int ci = 0; ci < c; ++ci) {
      T sum_g = T(0), sum_gx = T(0);
      for (int bi = 0; bi < b; ++bi) {
        const int64_t base = (static_cast<int64_t>(bi) * c + ci) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          sum_g += g.data[base + i];
          sum_gx += g.data[base + i] * xhat->data[base + i];
        }
      }
      if (ig >= 0) grads.slot(ig, Shape{c}).data[ci] += sum_gx;
      if (ibt >= 0) grads.slot(ibt, Shape{c}).data[ci] += sum_g;
      if (ix >= 0) {
        Tensor<T>& gx = grads.slot(ix, xs);
        const T scale = sg->data[ci] * inv_std[ci];
        const T mg = sum_g / static_cast<T>(per_channel);
        const T mgx = sum_gx / static_cast<T>(per_channel);
        for (int bi = 0; bi < b; ++bi) {
          const int64_t base = (static_cast<int64_t>(bi) * c + ci) * plane;
          for (int64_t i = 0; i < plane; ++i) {
            const T gv = g.data[base + i];
            gx.data[base + i] +=
                train ? scale * (gv - mg - xhat->data[base + i] * mgx) : scale * gv;
          }
        }
      }
    }
  };
  return make_value(tape, std::move(out), tracked_ids({ix, ig, ibt}), std::move(fn));
}

#define LEVELSEG_INSTANTIATE(T)                                                         \
  template Value<T> conv2d<T>(const Value<T>&, const Value<T>&, const Value<T>&, int,   \
                              int);                                                     \
  template Value<T> batch_norm<T>(const Value<T>&, const Value<T>&, const Value<T>&,    \
                                  RunningStats<T>&, BnMode, T, T);

LEVELSEG_INSTANTIATE(float)
LEVELSEG_INSTANTIATE(double)
#undef LEVELSEG_INSTANTIATE

}  // namespace levelseg::ad
