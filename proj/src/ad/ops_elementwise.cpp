#include <cmath>

#include "ops_common.hpp"

namespace levelseg::ad {

using detail::common_tape;
using detail::make_value;
using detail::tracked_ids;

namespace {

enum class Bin { Add, Sub, Mul, Div };

template <typename T>
T guarded_denom(T y) {
  return y + static_cast<T>(kGuard) * (y >= T(0) ? T(1) : T(-1));
}

// Equal shapes, or one operand with a single element broadcast over the other.
template <typename T>
Value<T> binary(Bin kind, const Value<T>& a, const Value<T>& b, const char* name) {
  const bool a_scalar = a.shape().numel() == 1;
  const bool b_scalar = b.shape().numel() == 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape())
    throw ShapeError(std::string(name) + ": operand shapes " + a.shape().str() +
                     " and " + b.shape().str() + " do not match");
  const Shape out_shape = a_scalar && !b_scalar ? b.shape() : a.shape();
  const int64_t n = out_shape.numel();

  Tensor<T> out(out_shape);
  const T* pa = a.tensor().data.data();
  const T* pb = b.tensor().data.data();
  for (int64_t i = 0; i < n; ++i) {
    const T x = pa[a_scalar ? 0 : i];
    const T y = pb[b_scalar ? 0 : i];
    switch (kind) {
      case Bin::Add: out.data[i] = x + y; break;
      case Bin::Sub: out.data[i] = x - y; break;
      case Bin::Mul: out.data[i] = x * y; break;
      case Bin::Div: out.data[i] = x / guarded_denom(y); break;
    }
  }

  Tape<T>* tape = common_tape<T>({&a, &b});
  if (!tape) return Value<T>::constant(std::move(out));

  const int ia = a.node(), ib = b.node();
  auto sa = a.ptr();
  auto sb = b.ptr();
  auto fn = [kind, ia, ib, sa, sb, a_scalar, b_scalar](const Tensor<T>& g,
                                                       Gradients<T>& grads) {
    const int64_t n = g.numel();
    if (ia >= 0) {
      Tensor<T>& ga = grads.slot(ia, sa->shape);
      for (int64_t i = 0; i < n; ++i) {
        T d;
        const T y = sb->data[b_scalar ? 0 : i];
        switch (kind) {
          case Bin::Add:
          case Bin::Sub: d = g.data[i]; break;
          case Bin::Mul: d = g.data[i] * y; break;
          case Bin::Div: d = g.data[i] / guarded_denom(y); break;
        }
        ga.data[a_scalar ? 0 : i] += d;
      }
    }
    if (ib >= 0) {
      Tensor<T>& gb = grads.slot(ib, sb->shape);
      for (int64_t i = 0; i < n; ++i) {
        T d;
        const T x = sa->data[a_scalar ? 0 : i];
        const T y = sb->data[b_scalar ? 0 : i];
        switch (kind) {
          case Bin::Add: d = g.data[i]; break;
          case Bin::Sub: d = -g.data[i]; break;
          case Bin::Mul: d = g.data[i] * x; break;
          case Bin::Div: {
            const T den = guarded_denom(y);
            d = -g.data[i] * x / (den * den);
            break;
          }
        }
        gb.data[b_scalar ? 0 : i] += d;
      }
    }
  };
  return make_value(tape, std::move(out), tracked_ids({ia, ib}), std::move(fn));
}

// Unary op with pointwise derivative computed from saved input and output.
template <typename T, typename Fwd, typename Der>
Value<T> unary(const Value<T>& x, Fwd fwd, Der der) {
  const int64_t n = x.shape().numel();
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < n; ++i) out.data[i] = fwd(x.tensor().data[i]);

  Tape<T>* tape = x.tape();
  if (!tape) return Value<T>::constant(std::move(out));

  auto p = std::make_shared<const Tensor<T>>(std::move(out));
  const int ix = x.node();
  auto sx = x.ptr();
  auto fn = [ix, sx, p, der](const Tensor<T>& g, Gradients<T>& grads) {
    Tensor<T>& gx = grads.slot(ix, sx->shape);
    const int64_t n = g.numel();
    for (int64_t i = 0; i < n; ++i)
      gx.data[i] += g.data[i] * der(sx->data[i], p->data[i]);
  };
  int id = tape->record({ix}, p->shape, std::move(fn));
  return Value<T>(p, tape, id);
}

}  // namespace

template <typename T>
Value<T> add(const Value<T>& a, const Value<T>& b) { return binary(Bin::Add, a, b, "add"); }
template <typename T>
Value<T> sub(const Value<T>& a, const Value<T>& b) { return binary(Bin::Sub, a, b, "sub"); }
template <typename T>
Value<T> mul(const Value<T>& a, const Value<T>& b) { return binary(Bin::Mul, a, b, "mul"); }
template <typename T>
Value<T> div_guarded(const Value<T>& a, const Value<T>& b) { return binary(Bin::Div, a, b, "div"); }

template <typename T>
Value<T> affine(const Value<T>& x, T scale, T offset) {
  const int64_t n = x.shape().numel();
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < n; ++i) out.data[i] = scale * x.tensor().data[i] + offset;

  Tape<T>* tape = x.tape();
  if (!tape) return Value<T>::constant(std::move(out));
  const int ix = x.node();
  const Shape xs = x.shape();
  auto fn = [ix, xs, scale](const Tensor<T>& g, Gradients<T>& grads) {
    Tensor<T>& gx = grads.slot(ix, xs);
    const int64_t n = g.numel();
    for (int64_t i = 0; i < n; ++i) gx.data[i] += scale * g.data[i];
  };
  return make_value(tape, std::move(out), {ix}, std::move(fn));
}

template <typename T>
Value<T> add_scalar(const Value<T>& x, T c) { return affine(x, T(1), c); }
template <typename T>
Value<T> mul_scalar(const Value<T>& x, T c) { return affine(x, c, T(0)); }
template <typename T>
Value<T> neg(const Value<T>& x) { return affine(x, T(-1), T(0)); }

template <typename T>
Value<T> square(const Value<T>& x) {
  return unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Value<T> sqrt_guarded(const Value<T>& x) {
  return unary(
      x, [](T v) { return std::sqrt(std::max(v, T(0))); },
      [](T, T s) { return T(1) / (T(2) * s + static_cast<T>(kGuard)); });
}

template <typename T>
Value<T> arctan(const Value<T>& x) {
  return unary(x, [](T v) { return std::atan(v); },
               [](T v, T) { return T(1) / (T(1) + v * v); });
}

template <typename T>
Value<T> sigmoid(const Value<T>& x) {
  auto fwd = [](T v) {
    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
    const T e = std::exp(v);
    return e / (T(1) + e);
  };
  return unary(x, fwd, [](T, T s) { return s * (T(1) - s); });
}

template <typename T>
Value<T> relu(const Value<T>& x) {
  return unary(x, [](T v) { return v > T(0) ? v : T(0); },
               [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Value<T> softplus(const Value<T>& x) {
  auto fwd = [](T v) {
    if (v > T(30)) return v;
    if (v < T(-30)) return std::exp(v);
    return std::log1p(std::exp(v));
  };
  auto der = [](T v, T) {
    if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
    const T e = std::exp(v);
    return e / (T(1) + e);
  };
  return unary(x, fwd, der);
}

template <typename T>
Value<T> clamp(const Value<T>& x, T lo, T hi) {
  return unary(
      x, [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <typename T>
Value<T> broadcast_to(const Value<T>& s, const Shape& shape) {
  if (s.shape().numel() != 1)
    throw ShapeError("broadcast_to: source must be a single element, got " + s.shape().str());
  Tensor<T> out(shape, s.tensor().data[0]);

  Tape<T>* tape = s.tape();
  if (!tape) return Value<T>::constant(std::move(out));
  const int is = s.node();
  const Shape ss = s.shape();
  auto fn = [is, ss](const Tensor<T>& g, Gradients<T>& grads) {
    Tensor<T>& gs = grads.slot(is, ss);
    T acc = T(0);
    for (T v : g.data) acc += v;
    gs.data[0] += acc;
  };
  return make_value(tape, std::move(out), {is}, std::move(fn));
}

template <typename T>
Value<T> sum(const Value<T>& x) {
  T acc = T(0);
  for (T v : x.tensor().data) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);

  Tape<T>* tape = x.tape();
  if (!tape) return Value<T>::constant(std::move(out));
  const int ix = x.node();
  const Shape xs = x.shape();
  auto fn = [ix, xs](const Tensor<T>& g, Gradients<T>& grads) {
    Tensor<T>& gx = grads.slot(ix, xs);
    const T g0 = g.data[0];
    for (T& v : gx.data) v += g0;
  };
  return make_value(tape, std::move(out), {ix}, std::move(fn));
}

template <typename T>
Value<T> mean(const Value<T>& x) {
  return mul_scalar(sum(x), T(1) / static_cast<T>(x.shape().numel()));
}

template <typename T>
Value<T> concat_channels(const std::vector<Value<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = xs[0].shape();
  if (s0.rank != 4) throw ShapeError("concat_channels: rank-4 inputs required, got " + s0.str());
  int ctotal = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    if (s.rank != 4 || s.d[0] != s0.d[0] || s.d[2] != s0.d[2] || s.d[3] != s0.d[3])
      throw ShapeError("concat_channels: incompatible shapes " + s0.str() + " and " + s.str());
    ctotal += s.d[1];
  }
  const int b = s0.d[0], h = s0.d[2], w = s0.d[3];
  Tensor<T> out(Shape::nchw(b, ctotal, h, w));
  const int64_t plane = static_cast<int64_t>(h) * w;
  int coff = 0;
  for (const auto& x : xs) {
    const int cx = x.shape().d[1];
    for (int bi = 0; bi < b; ++bi)
      std::copy_n(x.tensor().data.data() + static_cast<int64_t>(bi) * cx * plane, cx * plane,
                  out.data.data() + (static_cast<int64_t>(bi) * ctotal + coff) * plane);
    coff += cx;
  }

  Tape<T>* tape = nullptr;
  for (const auto& x : xs) {
    std::initializer_list<const Value<T>*> one = {&x};
    Tape<T>* t = common_tape<T>(one);
    if (t) {
      if (tape && tape != t) throw Error("operands recorded on different tapes");
      tape = t;
    }
  }
  if (!tape) return Value<T>::constant(std::move(out));

  std::vector<int> ids;
  std::vector<Shape> shapes;
  for (const auto& x : xs) {
    ids.push_back(x.node());
    shapes.push_back(x.shape());
  }
  auto fn = [ids, shapes, b, ctotal, plane](const Tensor<T>& g, Gradients<T>& grads) {
    int coff = 0;
    for (size_t k = 0; k < ids.size(); ++k) {
      const int cx = shapes[k].d[1];
      if (ids[k] >= 0) {
        Tensor<T>& gx = grads.slot(ids[k], shapes[k]);
        for (int bi = 0; bi < b; ++bi) {
          const T* src = g.data.data() + (static_cast<int64_t>(bi) * ctotal + coff) * plane;
          T* dst = gx.data.data() + static_cast<int64_t>(bi) * cx * plane;
          for (int64_t i = 0; i < cx * plane; ++i) dst[i] += src[i];
        }
      }
      coff += cx;
    }
  };
  std::vector<int> tracked;
  for (int id : ids)
    if (id >= 0) tracked.push_back(id);
  return make_value(tape, std::move(out), std::move(tracked), std::move(fn));
}

template <typename T>
Value<T> stop_gradient(const Value<T>& x) {
  return Value<T>(x.ptr(), nullptr, -1);
}

#define LEVELSEG_INSTANTIATE(T)                                                  \
  template Value<T> add<T>(const Value<T>&, const Value<T>&);                    \
  template Value<T> sub<T>(const Value<T>&, const Value<T>&);                    \
  template Value<T> mul<T>(const Value<T>&, const Value<T>&);                    \
  template Value<T> div_guarded<T>(const Value<T>&, const Value<T>&);            \
  template Value<T> affine<T>(const Value<T>&, T, T);                            \
  template Value<T> add_scalar<T>(const Value<T>&, T);                           \
  template Value<T> mul_scalar<T>(const Value<T>&, T);                           \
  template Value<T> neg<T>(const Value<T>&);                                     \
  template Value<T> square<T>(const Value<T>&);                                  \
  template Value<T> sqrt_guarded<T>(const Value<T>&);                            \
  template Value<T> arctan<T>(const Value<T>&);                                  \
  template Value<T> sigmoid<T>(const Value<T>&);                                 \
  template Value<T> relu<T>(const Value<T>&);                                    \
  template Value<T> softplus<T>(const Value<T>&);                                \
  template Value<T> clamp<T>(const Value<T>&, T, T);                             \
  template Value<T> broadcast_to<T>(const Value<T>&, const Shape&);              \
  template Value<T> sum<T>(const Value<T>&);                                     \
  template Value<T> mean<T>(const Value<T>&);                                    \
  template Value<T> concat_channels<T>(const std::vector<Value<T>>&);            \
  template Value<T> stop_gradient<T>(const Value<T>&);

LEVELSEG_INSTANTIATE(float)
LEVELSEG_INSTANTIATE(double)
#undef LEVELSEG_INSTANTIATE

}  // namespace levelseg::ad
