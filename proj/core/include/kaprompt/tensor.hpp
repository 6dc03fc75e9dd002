#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace kaprompt {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Handle of a tensor recorded on a gradient tape.
struct TapeHandle {
  std::uint64_t tape_serial = 0;
  std::size_t node = 0;
};

/// Dense row-major tensor of doubles.
///
/// A tensor is a plain value unless it was produced by GradientTape::watch or
/// by an operation with a taped input, in which case it carries a handle into
/// the tape that recorded it. Rank 0 is a scalar, rank 1 a vector and rank 2 a
/// row-major matrix; nothing in the library needs more.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  // Matrix accessors; a vector counts as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return values_; }
  // Mutable access is refused for taped tensors, their values are owned by
  // the recorded graph.
  std::span<double> mutable_values();

  double operator[](std::size_t i) const { return values_[i]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool flag) { requires_grad_ = flag; }
  bool on_tape() const { return tape_.has_value(); }
  const std::optional<TapeHandle>& tape_id() const { return tape_; }

  // Copy of the values with no tape participation.
  Tensor detach() const;

  bool all_finite() const;
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  friend class GradientTape;

  Shape shape_;
  std::vector<double> values_;
  bool requires_grad_ = false;
  std::optional<TapeHandle> tape_;
};

class Gradients;

/// Reverse-mode gradient tape.
///
/// Constructing a tape makes it the active tape of the calling thread until it
/// is destroyed; tapes nest. Operations record onto the active tape whenever
/// one of their inputs carries a handle. A fresh tape is created for every
/// optimization step, so recorded graphs never outlive one step.
class GradientTape {
 public:
  // Accumulates the gradient of one node's inputs from its output gradient.
  using Backprop = std::function<void(std::span<const double> out_grad,
                                      std::vector<std::vector<double>>& grads)>;

  GradientTape();
  ~GradientTape();
  GradientTape(const GradientTape&) = delete;
  GradientTape& operator=(const GradientTape&) = delete;

  static GradientTape* active();

  // Registers a leaf; the returned copy carries the tape handle.
  Tensor watch(const Tensor& value);

  // Used by operations: records the output node and stamps its handle.
  void record(Tensor& output, std::vector<std::size_t> inputs, Backprop backprop);

  // Node index of a tensor on this tape; throws UsageError otherwise.
  std::size_t node_of(const Tensor& t) const;

  Gradients backward(const Tensor& loss) const;

  std::size_t node_count() const { return nodes_.size(); }
  std::uint64_t serial() const { return serial_; }

 private:
  struct Node {
    Shape shape;
    std::vector<std::size_t> inputs;
    Backprop backprop;  // empty for leaves
  };

  std::uint64_t serial_;
  GradientTape* previous_;
  std::vector<Node> nodes_;
};

/// Result of one backward pass: gradient per watched tensor.
class Gradients {
 public:
  // Gradient of the loss with respect to a watched tensor; zeros when the
  // loss does not depend on it.
  Tensor wrt(const Tensor& watched) const;

 private:
  friend class GradientTape;
  std::uint64_t tape_serial_ = 0;
  std::vector<Shape> shapes_;
  std::vector<std::vector<double>> grads_;
};

// Backward on the active tape.
Gradients backward(const Tensor& loss);

}  // namespace kaprompt
