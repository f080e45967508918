#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fusenet {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major float64 tensor with an optional gradient slot.
///
/// A Tensor is a shared handle: copies alias the same storage, which is what
/// lets the tape route gradients back to parameters. Shape is fixed at
/// construction; `reshape` produces a new tensor. Values are only written
/// through `mutable_values()`, which is reserved for initialization and
/// optimizer updates.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->values.size(); }

  std::span<const double> values() const { return impl_->values; }
  std::span<double> mutable_values() { return impl_->values; }
  double operator[](std::size_t i) const { return impl_->values[i]; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);

  bool has_grad() const { return impl_->grad_set; }
  std::span<const double> grad() const { return impl_->grad; }
  /// Gradient buffer, allocated as zeros on first access.
  std::span<double> grad_buffer() const;
  void zero_grad() const;
  void clear_grad();

  /// Copy of the values with no gradient history.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
    bool grad_set = false;
  };
  std::shared_ptr<Impl> impl_;
};

/// Ordered record of differentiable operations.
///
/// Ops record onto the tape that is active on the calling thread (see
/// `Tape::Scope`) whenever one of their inputs requires a gradient. With no
/// active tape, ops run forward only.
class Tape {
 public:
  using Rule = std::function<void(const Tensor& output)>;

  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    Rule backward;
  };

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  static Tape* current();

  void record(std::vector<Tensor> inputs, Tensor output, Rule rule);
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

/// Populates `grad` on every requires_grad tensor reachable from `loss`.
/// Gradients accumulate into existing buffers; call `zero_grad` between
/// steps. Throws NotScalar unless `loss` has exactly one element.
void backward(const Tensor& loss, Tape& tape);

/// True if any of `inputs` requires a gradient and a tape is active.
bool should_record(std::initializer_list<const Tensor*> inputs);

/// Marks `output` as differentiable and records it on the active tape.
void record_op(std::vector<Tensor> inputs, Tensor& output, Tape::Rule rule);

/// Max over coordinates of |analytic - central| / max(|analytic|, |central|, 1e-8)
/// for scalar-valued `f` at `x`, using central differences with step `h`.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double h = 1e-5);

}  // namespace fusenet
