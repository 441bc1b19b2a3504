#pragma once

#include <functional>
#include <vector>

#include "kptrack/error.hpp"
#include "kptrack/tensor.hpp"

namespace kptrack {

/// Ordered record of differentiable ops executed while the tape is active.
/// Ops append in execution order, so the record is topologically sorted by
/// construction. backward() replays it in reverse once and then clears it.
class Tape {
 public:
  struct Record {
    Tensor output;
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(Tensor output, std::function<void()> backward) {
    records_.push_back({std::move(output), std::move(backward)});
  }

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  void clear() { records_.clear(); }

  bool produced(const Tensor& t) const {
    for (const auto& r : records_) {
      if (r.output.same_storage(t)) return true;
    }
    return false;
  }

  /// Seeds d(loss)/d(loss) = 1 and propagates gradients through every
  /// recorded op, newest first. The tape is empty afterwards.
  void backward(Tensor loss) {
    if (loss.size() != 1) {
      throw UsageError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (!produced(loss)) {
      records_.clear();
      throw UsageError("backward(): loss was not produced on the active tape");
    }
    if (!std::isfinite(loss.item())) {
      records_.clear();
      throw NumericError("backward(): loss is not finite");
    }
    loss.grad_buffer()[0] += 1.0f;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      if (it->output.has_grad()) it->backward();
    }
    records_.clear();
  }

  static Tape*& current() {
    thread_local Tape* active = nullptr;
    return active;
  }

 private:
  std::vector<Record> records_;
};

/// Makes `tape` the active recording target for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : previous_(Tape::current()) { Tape::current() = &tape; }
  ~TapeScope() { Tape::current() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Disables recording for the current thread (inference).
class NoGradScope {
 public:
  NoGradScope() : previous_(Tape::current()) { Tape::current() = nullptr; }
  ~NoGradScope() { Tape::current() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

/// Registers `out` on the active tape when any input requires grad.
/// Returns true when the op was recorded.
inline bool record_op(Tensor& out, std::initializer_list<const Tensor*> inputs,
                      std::function<void()> backward) {
  Tape* tape = Tape::current();
  if (!tape || !any_requires_grad(inputs)) return false;
  out.set_requires_grad(true);
  tape->record(out, std::move(backward));
  return true;
}

inline void accumulate(Tensor& target, std::span<const float> delta) {
  if (!target.requires_grad()) return;
  auto g = target.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

}  // namespace detail

/// Backward pass on the active tape.
inline void backward(Tensor loss) {
  Tape* tape = Tape::current();
  if (!tape) throw UsageError("backward() called with no active tape");
  tape->backward(std::move(loss));
}

}  // namespace kptrack
