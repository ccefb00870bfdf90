#pragma once

#include <string>
#include <vector>

#include "pearnet/ops.hpp"

namespace pearnet {

// Named trainable tensor; the model aggregates these for the optimizer and
// checkpointing.
struct NamedParam {
  std::string name;
  TensorPtr value;
};

// y = W x + b for a vector x. W is [out,in], b is [out].
inline TensorPtr linear_vec(const TensorPtr& w, const TensorPtr& b, const TensorPtr& x) {
  auto y = ops::matmul(w, ops::reshape(x, {x->dim(0), 1}));
  return ops::add(ops::reshape(y, {w->dim(0)}), b);
}

}  // namespace pearnet
