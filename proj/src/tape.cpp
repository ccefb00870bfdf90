#include "pearnet/tape.hpp"

namespace pearnet {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::vector<double>& Adjoints::of(const TensorPtr& t) {
  auto it = buf_.find(t.get());
  if (it == buf_.end()) {
    it = buf_.emplace(t.get(), std::vector<double>(t->numel(), 0.0)).first;
    touched_.push_back(t);
  }
  return it->second;
}

const std::vector<double>* Adjoints::find(const Tensor* t) const {
  auto it = buf_.find(t);
  return it == buf_.end() ? nullptr : &it->second;
}

void Tape::backward(const TensorPtr& loss) {
  if (!loss || loss->numel() != 1) {
    throw InvalidArgument("backward requires a scalar loss tensor");
  }
  Adjoints adj;
  adj.of(loss)[0] = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    (*it)(adj);
  }
  // touched_ preserves first-touch order, keeping accumulation deterministic.
  for (const TensorPtr& t : adj.touched_) {
    if (!t->requires_grad) continue;
    const std::vector<double>& a = *adj.find(t.get());
    for (std::size_t i = 0; i < a.size(); ++i) t->grad[i] += a[i];
  }
}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& t) : prev_(g_active_tape) { g_active_tape = &t; }

TapeScope::~TapeScope() { g_active_tape = prev_; }

}  // namespace pearnet
