#pragma once

#include <functional>
#include <vector>

#include "pearnet/ops.hpp"

// Central finite-difference gradient checking. The forward callback must
// rebuild its graph from the same leaf tensors on every call (ops are recorded
// only while a tape is active, so plain calls evaluate without recording).
namespace fdcheck {

using pearnet::Tape;
using pearnet::TapeScope;
using pearnet::TensorPtr;

struct Report {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

inline double rel_err(double analytic, double fd) {
  const double denom = std::max(1.0, std::fabs(fd));
  return std::fabs(analytic - fd) / denom;
}

// Returns the worst relative error over all elements of all params.
inline Report check(const std::function<TensorPtr()>& forward, const std::vector<TensorPtr>& params,
                    double step = 1e-6) {
  for (const auto& p : params) p->zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    TensorPtr loss = forward();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p->grad);

  Report rep;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    for (std::size_t i = 0; i < p->numel(); ++i) {
      const double saved = p->data[i];
      p->data[i] = saved + step;
      const double lp = forward()->data[0];
      p->data[i] = saved - step;
      const double lm = forward()->data[0];
      p->data[i] = saved;
      const double fd = (lp - lm) / (2.0 * step);
      rep.max_rel_err = std::max(rep.max_rel_err, rel_err(analytic[pi][i], fd));
      ++rep.checked;
    }
  }
  return rep;
}

}  // namespace fdcheck
