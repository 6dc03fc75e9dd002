#include "kaprompt/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "kaprompt/errors.hpp"

namespace kaprompt {

namespace {

thread_local GradientTape* active_tape = nullptr;
std::atomic<std::uint64_t> next_serial{1};

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_.size() > 2) {
    throw DimensionError("tensor: rank " + std::to_string(shape_.size()) +
                         " is not supported");
  }
  if (shape_size(shape_) != values_.size()) {
    throw DimensionError("tensor: shape " + shape_string(shape_) + " holds " +
                         std::to_string(shape_size(shape_)) + " values, got " +
                         std::to_string(values_.size()));
  }
}

Tensor Tensor::zeros(Shape shape) {
  const std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const { return shape_.size() == 2 ? shape_[0] : 1; }

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 1;
  return shape_.back();
}

std::span<double> Tensor::mutable_values() {
  if (tape_) throw UsageError("tensor: values of a taped tensor are read-only");
  return values_;
}

double Tensor::item() const {
  if (values_.size() != 1) {
    throw DimensionError("item: tensor of shape " + shape_string(shape_) +
                         " is not a scalar");
  }
  return values_[0];
}

Tensor Tensor::detach() const { return Tensor(shape_, values_); }

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

GradientTape::GradientTape()
    : serial_(next_serial.fetch_add(1)), previous_(active_tape) {
  active_tape = this;
}

GradientTape::~GradientTape() { active_tape = previous_; }

GradientTape* GradientTape::active() { return active_tape; }

Tensor GradientTape::watch(const Tensor& value) {
  Tensor out(value.shape_, value.values_);
  out.requires_grad_ = true;
  out.tape_ = TapeHandle{serial_, nodes_.size()};
  nodes_.push_back(Node{out.shape_, {}, {}});
  return out;
}

void GradientTape::record(Tensor& output, std::vector<std::size_t> inputs,
                          Backprop backprop) {
  output.requires_grad_ = true;
  output.tape_ = TapeHandle{serial_, nodes_.size()};
  nodes_.push_back(Node{output.shape_, std::move(inputs), std::move(backprop)});
}

std::size_t GradientTape::node_of(const Tensor& t) const {
  if (!t.tape_ || t.tape_->tape_serial != serial_) {
    throw UsageError("gradient tape: tensor was not recorded on this tape");
  }
  return t.tape_->node;
}

Gradients GradientTape::backward(const Tensor& loss) const {
  if (loss.size() != 1 || loss.rank() != 0) {
    throw UsageError("backward: loss must be a scalar, got shape " +
                     shape_string(loss.shape()));
  }
  const std::size_t root = node_of(loss);

  std::vector<std::vector<double>> grads(nodes_.size());
  grads[root].assign(1, 1.0);
  for (std::size_t i = root + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (grads[i].empty() || !node.backprop) continue;
    node.backprop(grads[i], grads);
  }

  Gradients result;
  result.tape_serial_ = serial_;
  result.shapes_.reserve(nodes_.size());
  for (const Node& node : nodes_) result.shapes_.push_back(node.shape);
  result.grads_ = std::move(grads);
  return result;
}

Tensor Gradients::wrt(const Tensor& watched) const {
  const auto& handle = watched.tape_id();
  if (!handle || handle->tape_serial != tape_serial_ ||
      handle->node >= grads_.size()) {
    throw UsageError("gradients: tensor was not watched on the differentiated tape");
  }
  const Shape& shape = shapes_[handle->node];
  const auto& g = grads_[handle->node];
  if (g.empty()) return Tensor::zeros(shape);
  return Tensor(shape, g);
}

Gradients backward(const Tensor& loss) {
  GradientTape* tape = GradientTape::active();
  if (tape == nullptr) throw UsageError("backward: no active gradient tape");
  return tape->backward(loss);
}

}  // namespace kaprompt
