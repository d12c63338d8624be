#include "levelseg/ad/gradcheck.hpp"

#include <cmath>

namespace levelseg::ad {

template <typename T>
GradCheckReport grad_check_multi(
    const std::function<Value<T>(const std::vector<Value<T>>&)>& f,
    const std::vector<Tensor<T>>& inputs, T h,
    const std::vector<std::vector<int64_t>>* coords) {
  Tape<T> tape;
  std::vector<Value<T>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  Value<T> loss = f(leaves);
  if (loss.shape().numel() != 1)
    throw ShapeError("grad_check: f must return a scalar, got " + loss.shape().str());
  Gradients<T> grads = tape.backward(loss);

  auto eval_at = [&](const std::vector<Tensor<T>>& pts) {
    std::vector<Value<T>> consts;
    consts.reserve(pts.size());
    for (const auto& t : pts) consts.push_back(Value<T>::constant(t));
    return static_cast<double>(f(consts).tensor().item());
  };

  GradCheckReport rep;
  std::vector<Tensor<T>> work = inputs;
  for (size_t k = 0; k < inputs.size(); ++k) {
    const bool has_grad = grads.has(leaves[k]);
    const Tensor<T>* analytic = has_grad ? &grads.at(leaves[k]) : nullptr;

    std::vector<int64_t> all;
    const std::vector<int64_t>* idx = nullptr;
    if (coords && k < coords->size() && !(*coords)[k].empty()) {
      idx = &(*coords)[k];
    } else {
      all.resize(inputs[k].numel());
      for (int64_t i = 0; i < inputs[k].numel(); ++i) all[i] = i;
      idx = &all;
    }

    for (int64_t i : *idx) {
      const T saved = work[k].data[i];
      work[k].data[i] = saved + h;
      const double fp = eval_at(work);
      work[k].data[i] = saved - h;
      const double fm = eval_at(work);
      work[k].data[i] = saved;

      const double cd = (fp - fm) / (2.0 * static_cast<double>(h));
      const double an = analytic ? static_cast<double>(analytic->data[i]) : 0.0;
      const double rel =
          std::abs(an - cd) / std::max({std::abs(an), std::abs(cd), 1e-8});
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.wrt = k;
        rep.coord = i;
        rep.analytic = an;
        rep.central = cd;
      }
    }
  }
  return rep;
}

template <typename T>
double grad_check(const std::function<Value<T>(const Value<T>&)>& f, const Tensor<T>& x,
                  T h) {
  auto wrapped = [&f](const std::vector<Value<T>>& vs) { return f(vs[0]); };
  return grad_check_multi<T>(wrapped, {x}, h).max_rel_err;
}

template GradCheckReport grad_check_multi<float>(
    const std::function<Value<float>(const std::vector<Value<float>>&)>&,
    const std::vector<Tensor<float>>&, float, const std::vector<std::vector<int64_t>>*);
template GradCheckReport grad_check_multi<double>(
    const std::function<Value<double>(const std::vector<Value<double>>&)>&,
    const std::vector<Tensor<double>>&, double, const std::vector<std::vector<int64_t>>*);
template double grad_check<float>(const std::function<Value<float>(const Value<float>&)>&,
                                  const Tensor<float>&, float);
template double grad_check<double>(
    const std::function<Value<double>(const Value<double>&)>&, const Tensor<double>&,
    double);

}  // namespace levelseg::ad
