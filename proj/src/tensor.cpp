#include "fusenet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fusenet/error.hpp"

namespace fusenet {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor() : Tensor(Shape{1}, std::vector<double>{0.0}) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<Impl>()) {
  if (shape.empty()) throw ShapeMismatch("tensor rank must be at least 1");
  if (shape_size(shape) != values.size()) {
    throw ShapeMismatch("shape " + shape_string(shape) + " needs " +
                        std::to_string(shape_size(shape)) + " values, got " +
                        std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, {value}); }

double Tensor::item() const {
  if (size() != 1) throw NotScalar("item() on tensor of shape " + shape_string(shape()));
  return impl_->values[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

std::span<double> Tensor::grad_buffer() const {
  if (!impl_->grad_set) {
    impl_->grad.assign(impl_->values.size(), 0.0);
    impl_->grad_set = true;
  }
  return impl_->grad;
}

void Tensor::zero_grad() const {
  if (impl_->grad_set) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::clear_grad() {
  impl_->grad.clear();
  impl_->grad.shrink_to_fit();
  impl_->grad_set = false;
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->values); }

namespace {
thread_local Tape* active_tape = nullptr;
}  // namespace

Tape::Scope::Scope(Tape& tape) : previous_(active_tape) { active_tape = &tape; }
Tape::Scope::~Scope() { active_tape = previous_; }

Tape* Tape::current() { return active_tape; }

void Tape::record(std::vector<Tensor> inputs, Tensor output, Rule rule) {
  nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(rule)});
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (active_tape == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

void record_op(std::vector<Tensor> inputs, Tensor& output, Tape::Rule rule) {
  output.set_requires_grad(true);
  active_tape->record(std::move(inputs), output, std::move(rule));
}

void backward(const Tensor& loss, Tape& tape) {
  if (loss.size() != 1) {
    throw NotScalar("backward needs a single-element loss, got shape " +
                    shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  loss.grad_buffer()[0] += 1.0;
  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->backward(it->output);
  }
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double h) {
  Tensor probe = x.detach();
  probe.set_requires_grad(true);
  std::vector<double> analytic(x.size(), 0.0);
  {
    Tape tape;
    Tape::Scope scope(tape);
    Tensor y = f(probe);
    backward(y, tape);
    if (probe.has_grad()) {
      auto g = probe.grad();
      std::copy(g.begin(), g.end(), analytic.begin());
    }
  }

  const auto base = x.values();
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::vector<double> plus(base.begin(), base.end());
    std::vector<double> minus(base.begin(), base.end());
    plus[i] += h;
    minus[i] -= h;
    const double fp = f(Tensor(x.shape(), std::move(plus))).item();
    const double fm = f(Tensor(x.shape(), std::move(minus))).item();
    const double central = (fp - fm) / (2.0 * h);
    const double scale = std::max({std::abs(analytic[i]), std::abs(central), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - central) / scale);
  }
  return worst;
}

}  // namespace fusenet
