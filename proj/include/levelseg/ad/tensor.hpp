#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "levelseg/error.hpp"

namespace levelseg::ad {

/// Dimension list, rank 0 (scalar) through 4 (batch, channel, rows, cols).
struct Shape {
  std::array<int, 4> d{1, 1, 1, 1};
  int rank = 0;

  Shape() = default;
  Shape(std::initializer_list<int> dims) {
    rank = static_cast<int>(dims.size());
    if (rank > 4) throw ShapeError("shape rank > 4");
    int i = 0;
    for (int v : dims) d[i++] = v;
  }

  static Shape scalar() { return Shape{}; }
  static Shape grid(int h, int w) { return Shape{h, w}; }
  static Shape nchw(int n, int c, int h, int w) { return Shape{n, c, h, w}; }

  int64_t numel() const {
    int64_t n = 1;
    for (int i = 0; i < rank; ++i) n *= d[i];
    return n;
  }

  /// Rows of the trailing 2D plane (1 for scalars and vectors).
  int height() const { return rank >= 2 ? d[rank - 2] : 1; }
  int width() const { return rank >= 1 ? d[rank - 1] : 1; }
  /// Product of all leading dims before the trailing 2D plane.
  int64_t planes() const {
    int64_t n = 1;
    for (int i = 0; i + 2 < rank; ++i) n *= d[i];
    return rank >= 2 ? n : 1;
  }

  bool operator==(const Shape& o) const {
    if (rank != o.rank) return false;
    for (int i = 0; i < rank; ++i)
      if (d[i] != o.d[i]) return false;
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::ostringstream os;
    os << "[";
    for (int i = 0; i < rank; ++i) os << (i ? "," : "") << d[i];
    os << "]";
    return os.str();
  }
};

/// Dense row-major buffer with a shape. Mutable only until handed to a Value.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(s), data(static_cast<size_t>(s.numel()), T(0)) {}
  Tensor(Shape s, T fill) : shape(s), data(static_cast<size_t>(s.numel()), fill) {}
  Tensor(Shape s, std::vector<T> values) : shape(s), data(std::move(values)) {
    if (static_cast<int64_t>(data.size()) != shape.numel())
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape.str());
  }

  static Tensor scalar(T v) { return Tensor(Shape::scalar(), std::vector<T>{v}); }

  int64_t numel() const { return shape.numel(); }

  T& at(int i, int j) { return data[static_cast<size_t>(i) * shape.width() + j]; }
  T at(int i, int j) const { return data[static_cast<size_t>(i) * shape.width() + j]; }

  T& at4(int b, int c, int i, int j) {
    const auto& s = shape.d;
    return data[((static_cast<size_t>(b) * s[1] + c) * s[2] + i) * s[3] + j];
  }
  T at4(int b, int c, int i, int j) const {
    const auto& s = shape.d;
    return data[((static_cast<size_t>(b) * s[1] + c) * s[2] + i) * s[3] + j];
  }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape.str());
    return data[0];
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

}  // namespace levelseg::ad
