#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "pearnet/errors.hpp"
#include "pearnet/rng.hpp"

namespace pearnet {

// Dense row-major float64 tensor. Leaf parameters carry requires_grad and a
// same-shape grad buffer; intermediates receive gradients through the tape's
// adjoint buffers and never allocate grad.
class Tensor {
 public:
  std::vector<int> shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;

  Tensor() = default;
  Tensor(std::vector<int> s, bool rg);

  std::size_t numel() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  // 2-D access (row-major).
  double& at(int i, int j) { return data[static_cast<std::size_t>(i) * dim(1) + j]; }
  double at(int i, int j) const { return data[static_cast<std::size_t>(i) * dim(1) + j]; }
  // 3-D access.
  double& at(int i, int j, int k) {
    return data[(static_cast<std::size_t>(i) * dim(1) + j) * dim(2) + k];
  }
  double at(int i, int j, int k) const {
    return data[(static_cast<std::size_t>(i) * dim(1) + j) * dim(2) + k];
  }

  void zero_grad() {
    if (requires_grad) std::fill(grad.begin(), grad.end(), 0.0);
  }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

using TensorPtr = std::shared_ptr<Tensor>;

// Validates positive extents, returns the element count.
std::size_t checked_numel(const std::vector<int>& shape);

TensorPtr tensor(std::vector<int> shape, std::vector<double> values, bool requires_grad = false);
TensorPtr zeros(std::vector<int> shape, bool requires_grad = false);
TensorPtr full(std::vector<int> shape, double value, bool requires_grad = false);
TensorPtr scalar(double value, bool requires_grad = false);

// Uniform fan-in init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)), requires_grad on.
TensorPtr uniform_param(std::vector<int> shape, int fan_in, Rng& rng);

}  // namespace pearnet
