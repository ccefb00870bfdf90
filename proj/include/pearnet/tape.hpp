#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "pearnet/tensor.hpp"

namespace pearnet {

// Per-sweep adjoint buffers. Keyed by tensor identity; zero-initialized on
// first touch. Keeps touched tensors alive until the sweep finishes.
class Adjoints {
 public:
  std::vector<double>& of(const TensorPtr& t);
  // Null when the tensor received no gradient so far (lets records skip work).
  const std::vector<double>* find(const Tensor* t) const;

 private:
  friend class Tape;
  std::unordered_map<const Tensor*, std::vector<double>> buf_;
  std::vector<TensorPtr> touched_;
};

// Ordered record of primitive applications. Each op pushes one backward
// closure; closures are replayed in reverse on backward(). Every input of a
// record precedes it by construction (ops record at creation time).
class Tape {
 public:
  using BackwardFn = std::function<void(Adjoints&)>;

  void record(BackwardFn fn) { records_.push_back(std::move(fn)); }
  std::size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

  // Seeds d(loss)/d(loss) = 1, sweeps records in reverse, then accumulates
  // adjoints into .grad of every requires_grad tensor touched. Repeated calls
  // without zero_grad accumulate. Tensors never recorded keep grad zero.
  void backward(const TensorPtr& loss);

  // Innermost active tape on this thread, or null (pure-eval forward).
  static Tape* active();

 private:
  friend class TapeScope;
  std::vector<BackwardFn> records_;
};

// RAII guard making a tape the recording target for the current scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& t);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

}  // namespace pearnet
