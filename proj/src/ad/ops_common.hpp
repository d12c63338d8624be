#pragma once

#include <initializer_list>
#include <memory>

#include "levelseg/ad/ops.hpp"

namespace levelseg::ad::detail {

template <typename T>
Tape<T>* common_tape(std::initializer_list<const Value<T>*> vs) {
  Tape<T>* t = nullptr;
  for (const Value<T>* v : vs) {
    if (!v->tracked()) continue;
    if (t && v->tape() != t) throw Error("operands recorded on different tapes");
    t = v->tape();
  }
  return t;
}

/// Wrap a forward result, recording a node when any input is tracked.
template <typename T>
Value<T> make_value(Tape<T>* tape, Tensor<T> out, std::vector<int> tracked_inputs,
                    typename Tape<T>::BackwardFn fn) {
  auto p = std::make_shared<const Tensor<T>>(std::move(out));
  if (!tape) return Value<T>(p, nullptr, -1);
  int id = tape->record(std::move(tracked_inputs), p->shape, std::move(fn));
  return Value<T>(p, tape, id);
}

template <typename T>
void require_same_shape(const Value<T>& a, const Value<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": operand shapes " + a.shape().str() +
                     " and " + b.shape().str() + " do not match");
}

inline std::vector<int> tracked_ids(std::initializer_list<int> ids) {
  std::vector<int> out;
  for (int id : ids)
    if (id >= 0) out.push_back(id);
  return out;
}

}  // namespace levelseg::ad::detail
