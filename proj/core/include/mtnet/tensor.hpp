#ifndef MTNET_TENSOR_HPP_
#define MTNET_TENSOR_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <unordered_set>

#include "mtnet/common.hpp"

namespace mtnet {

// Dense N-d tensor with an optional reverse-mode tape link. The tape is the
// implicit graph formed by `parents`/`backprop`; each forward op that sees a
// grad-requiring input records a closure that scatters the output gradient
// back into its parents. Tensors that are tape inputs are never mutated.
template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // sized lazily, same length as data
  bool requires_grad = false;

  std::vector<std::shared_ptr<Tensor<T>>> parents;
  std::function<void(const Tensor<T>&)> backprop;  // reads this->grad

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
  void zero_grad() { grad.assign(data.size(), T(0)); }
};

template <class T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <class T>
TensorPtr<T> make_tensor(Shape shape, std::vector<T> values,
                         bool requires_grad = false) {
  auto t = std::make_shared<Tensor<T>>();
  require_shape(numel(shape) == static_cast<std::int64_t>(values.size()),
                "tensor data length " + std::to_string(values.size()) +
                    " does not match shape " + shape_str(shape));
  for (int d : shape)
    require_shape(d > 0, "non-positive dimension in shape " + shape_str(shape));
  t->shape = std::move(shape);
  t->data = std::move(values);
  t->requires_grad = requires_grad;
  return t;
}

template <class T>
TensorPtr<T> full(const Shape& shape, T value, bool requires_grad = false) {
  return make_tensor<T>(shape, std::vector<T>(numel(shape), value),
                        requires_grad);
}

template <class T>
TensorPtr<T> zeros(const Shape& shape, bool requires_grad = false) {
  return full<T>(shape, T(0), requires_grad);
}

template <class T>
TensorPtr<T> scalar_tensor(T value, bool requires_grad = false) {
  return make_tensor<T>({1}, {value}, requires_grad);
}

template <class T>
TensorPtr<T> randn(const Shape& shape, std::mt19937_64& rng, T stddev = T(1),
                   bool requires_grad = false) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng)) * stddev;
  return make_tensor<T>(shape, std::move(v), requires_grad);
}

template <class T>
bool all_finite(const std::vector<T>& v) {
  for (T x : v)
    if (!std::isfinite(static_cast<double>(x))) return false;
  return true;
}

namespace detail {

template <class T>
void topo_visit(Tensor<T>* node, std::unordered_set<Tensor<T>*>& seen,
                std::vector<Tensor<T>*>& order) {
  if (seen.count(node)) return;
  seen.insert(node);
  for (auto& p : node->parents) topo_visit(p.get(), seen, order);
  order.push_back(node);
}

}  // namespace detail

// Reverse pass from a scalar loss. Gradient buffers of every grad-requiring
// tensor reachable from `loss` are zeroed first, so repeated backward calls
// do not accumulate across invocations; parameter gradients from a single
// call are exact.
template <class T>
void backward(const TensorPtr<T>& loss) {
  require_shape(loss->size() == 1,
                "backward requires a scalar loss, got " + shape_str(loss->shape));
  std::unordered_set<Tensor<T>*> seen;
  std::vector<Tensor<T>*> order;
  detail::topo_visit(loss.get(), seen, order);
  for (auto* n : order)
    if (n->requires_grad) {
      n->ensure_grad();
      n->zero_grad();
    }
  loss->ensure_grad();
  loss->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor<T>* n = *it;
    if (n->backprop && n->requires_grad) n->backprop(*n);
  }
}

// Max relative error between analytic gradients and central finite
// differences of a scalar-valued tensor function. Meaningful at T = double.
template <class T>
T grad_check(const std::function<TensorPtr<T>(const TensorPtr<T>&)>& f,
             const TensorPtr<T>& x, T eps = T(1e-4)) {
  require_shape(eps > T(0), "grad_check eps must be positive");
  auto x0 = make_tensor<T>(x->shape, x->data, true);
  auto out = f(x0);
  require_shape(out->size() == 1, "grad_check requires a scalar-valued f");
  if (!std::isfinite(static_cast<double>(out->data[0])))
    throw NumericError("grad_check: f(x) is not finite");
  backward(out);
  std::vector<T> analytic = x0->grad;

  T max_err = T(0);
  for (std::size_t i = 0; i < x->data.size(); ++i) {
    auto xp = make_tensor<T>(x->shape, x->data, false);
    xp->data[i] += eps;
    T fp = f(xp)->data[0];
    auto xm = make_tensor<T>(x->shape, x->data, false);
    xm->data[i] -= eps;
    T fm = f(xm)->data[0];
    T numeric = (fp - fm) / (T(2) * eps);
    T denom = std::max({std::abs(analytic[i]), std::abs(numeric), T(1e-8)});
    max_err = std::max(max_err, std::abs(analytic[i] - numeric) / denom);
  }
  return max_err;
}

}  // namespace mtnet

#endif  // MTNET_TENSOR_HPP_
