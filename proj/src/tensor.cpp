#include "pearnet/tensor.hpp"

#include <cmath>

namespace pearnet {

std::size_t checked_numel(const std::vector<int>& shape) {
  if (shape.empty()) throw InvalidArgument("tensor shape must have at least one extent");
  std::size_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw InvalidArgument("tensor extents must be positive");
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

Tensor::Tensor(std::vector<int> s, bool rg) : shape(std::move(s)), requires_grad(rg) {
  const std::size_t n = checked_numel(shape);
  data.assign(n, 0.0);
  if (requires_grad) grad.assign(n, 0.0);
}

TensorPtr tensor(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
  const std::size_t n = checked_numel(shape);
  if (values.size() != n) throw InvalidArgument("tensor data length does not match shape");
  auto t = std::make_shared<Tensor>(std::move(shape), requires_grad);
  t->data = std::move(values);
  return t;
}

TensorPtr zeros(std::vector<int> shape, bool requires_grad) {
  return std::make_shared<Tensor>(std::move(shape), requires_grad);
}

TensorPtr full(std::vector<int> shape, double value, bool requires_grad) {
  auto t = std::make_shared<Tensor>(std::move(shape), requires_grad);
  std::fill(t->data.begin(), t->data.end(), value);
  return t;
}

TensorPtr scalar(double value, bool requires_grad) {
  return tensor({1}, {value}, requires_grad);
}

TensorPtr uniform_param(std::vector<int> shape, int fan_in, Rng& rng) {
  auto t = std::make_shared<Tensor>(std::move(shape), true);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
  for (double& v : t->data) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace pearnet
