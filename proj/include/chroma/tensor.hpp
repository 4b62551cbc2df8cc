#pragma once

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

#include "chroma/errors.hpp"

namespace chroma {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (std::int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
class Tape;

// Dense N-d array of T with an optional gradient buffer. The data buffer is
// immutable once the tensor participates in a graph; parameters are mutated
// only by the optimizer between steps. Copies are shallow (shared buffers).
template <typename T>
class Tensor {
 public:
  using Buffer = std::shared_ptr<std::vector<T>>;

  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(
            static_cast<std::size_t>(numel(shape_)), T{0})) {}

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(std::move(data))) {
    if (static_cast<std::int64_t>(data_->size()) != numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_->size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    for (T& v : *t.data_) v = value;
    return t;
  }

  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  const Shape& shape() const { return shape_; }
  std::int64_t size() const { return numel(shape_); }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }
  bool defined() const { return data_ != nullptr; }

  const T* data() const { return data_->data(); }
  T* data() { return data_->data(); }
  std::span<const T> values() const { return {data_->data(), data_->size()}; }

  T item() const {
    if (size() != 1) {
      throw PreconditionError("item() requires a scalar tensor, got shape " +
                              shape_str(shape_));
    }
    return (*data_)[0];
  }

  bool requires_grad() const { return grad_ != nullptr; }

  // Marks the tensor as a differentiation leaf (a parameter) by attaching a
  // zero gradient buffer.
  void enable_grad() {
    if (!grad_) grad_ = std::make_shared<std::vector<T>>(data_->size(), T{0});
  }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T{0});
  }

  const std::vector<T>& grad() const {
    if (!grad_) throw PreconditionError("tensor has no gradient buffer");
    return *grad_;
  }

  // Same data, no gradient participation.
  Tensor detach() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
  }

  // Same data and gradient buffers under a new shape. No tape node is needed:
  // gradient accumulation flows through the shared buffer.
  Tensor reshape(Shape shape) const {
    if (numel(shape) != size()) {
      throw ShapeError("reshape from " + shape_str(shape_) + " to " +
                       shape_str(shape) + " changes element count");
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    t.grad_ = grad_;
    return t;
  }

  // Deep copy of the data (fresh buffer, no grad).
  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<T>>(*data_);
    return t;
  }

  Buffer data_buffer() const { return data_; }
  Buffer grad_buffer() const { return grad_; }

 private:
  Shape shape_;
  Buffer data_;
  Buffer grad_;
};

// Reverse-mode tape. One training update owns one tape; recording is
// single-threaded. Nodes are closures that turn an output gradient into
// input gradient contributions; backward replays them in strict reverse
// append order exactly once.
template <typename T>
class Tape {
 public:
  Tape() : prev_(active_) { active_ = this; }
  ~Tape() { active_ = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return active_; }

  void record(std::function<void()> node) { nodes_.push_back(std::move(node)); }

  std::size_t node_count() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every recorded
  // buffer reachable from the loss. The tape is consumed afterwards.
  void backward(const Tensor<T>& loss) {
    if (consumed_) throw PreconditionError("tape already consumed by backward");
    if (loss.size() != 1) {
      throw PreconditionError("backward requires a scalar loss, got shape " +
                              shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
      throw PreconditionError("loss is not recorded on the tape");
    }
    (*loss.grad_buffer())[0] = T{1};
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    nodes_.clear();
    consumed_ = true;
  }

 private:
  std::vector<std::function<void()>> nodes_;
  Tape* prev_ = nullptr;
  bool consumed_ = false;
  inline static thread_local Tape* active_ = nullptr;
};

namespace detail {

// An op output joins the graph when a tape is live and any input carries a
// gradient buffer. Constants stay constants.
template <typename T>
bool recording(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::current() == nullptr) return false;
  for (const Tensor<T>* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

}  // namespace detail

}  // namespace chroma
