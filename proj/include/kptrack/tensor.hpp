#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "kptrack/error.hpp"

namespace kptrack {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

struct TensorStorage {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until first accumulation
  bool requires_grad = false;
};

}  // namespace detail

/// Dense row-major float32 tensor. Copies share storage; use clone() for a
/// deep copy. Gradients live alongside the data and are filled by backward().
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f) : s_(std::make_shared<detail::TensorStorage>()) {
    for (auto d : shape) {
      if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    s_->shape = std::move(shape);
    s_->data.assign(static_cast<std::size_t>(numel(s_->shape)), fill);
  }

  Tensor(Shape shape, std::vector<float> values) : Tensor(std::move(shape)) {
    if (values.size() != s_->data.size()) {
      throw ShapeError("tensor of shape " + shape_str(s_->shape) + " needs " +
                       std::to_string(s_->data.size()) + " values, got " +
                       std::to_string(values.size()));
    }
    s_->data = std::move(values);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0f); }
  static Tensor scalar(float v) { return Tensor(Shape{1}, v); }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::int64_t dim(std::size_t i) const { return s_->shape.at(i); }
  std::size_t ndim() const { return s_->shape.size(); }
  std::int64_t size() const { return static_cast<std::int64_t>(s_->data.size()); }

  std::span<float> data() { return s_->data; }
  std::span<const float> data() const { return s_->data; }
  float* ptr() { return s_->data.data(); }
  const float* ptr() const { return s_->data.data(); }
  float& operator[](std::int64_t i) { return s_->data[static_cast<std::size_t>(i)]; }
  float operator[](std::int64_t i) const { return s_->data[static_cast<std::size_t>(i)]; }

  // [C,H,W] accessors.
  float& at(std::int64_t c, std::int64_t y, std::int64_t x) {
    return s_->data[static_cast<std::size_t>((c * s_->shape[1] + y) * s_->shape[2] + x)];
  }
  float at(std::int64_t c, std::int64_t y, std::int64_t x) const {
    return s_->data[static_cast<std::size_t>((c * s_->shape[1] + y) * s_->shape[2] + x)];
  }

  float item() const {
    if (s_->data.size() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
    return s_->data[0];
  }

  bool requires_grad() const { return s_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    s_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !s_->grad.empty(); }
  std::span<const float> grad() const { return s_->grad; }
  std::span<float> grad() { return s_->grad; }

  /// Returns the gradient buffer, allocating zeros on first use.
  std::span<float> grad_buffer() {
    if (s_->grad.empty()) s_->grad.assign(s_->data.size(), 0.0f);
    return s_->grad;
  }
  void zero_grad() { s_->grad.clear(); }

  Tensor clone() const {
    Tensor t(shape());
    std::copy(s_->data.begin(), s_->data.end(), t.s_->data.begin());
    t.s_->requires_grad = s_->requires_grad;
    return t;
  }

  /// Detached copy that never participates in autodiff.
  Tensor detach() const {
    Tensor t = clone();
    t.s_->requires_grad = false;
    return t;
  }

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

  bool all_finite() const {
    return std::all_of(s_->data.begin(), s_->data.end(), [](float v) { return std::isfinite(v); });
  }

 private:
  std::shared_ptr<detail::TensorStorage> s_;
};

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (!t.defined() || t.ndim() != rank) {
    throw ShapeError(std::string(what) + ": expected rank-" + std::to_string(rank) + " tensor, got " +
                     (t.defined() ? shape_str(t.shape()) : std::string("undefined")));
  }
}

inline void require_shape(const Tensor& t, const Shape& expected, const char* what) {
  if (!t.defined() || t.shape() != expected) {
    throw ShapeError(std::string(what) + ": expected shape " + shape_str(expected) + ", got " +
                     (t.defined() ? shape_str(t.shape()) : std::string("undefined")));
  }
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::equal(a.data().begin(), a.data().end(), b.data().begin(),
                    [](float x, float y) { return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y); });
}

}  // namespace kptrack
