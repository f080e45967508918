#include "fusenet/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>

#include "fusenet/error.hpp"

namespace fusenet {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

// For each element of a, the flat index of the b element it pairs with.
// Empty when the shapes are identical.
std::shared_ptr<const std::vector<std::size_t>> broadcast_map(const Tensor& a, const Tensor& b,
                                                              const char* op) {
  if (a.shape() == b.shape()) return nullptr;
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  auto fail = [&] {
    throw ShapeMismatch(std::string(op) + ": cannot broadcast " + shape_string(bs) + " onto " +
                        shape_string(as));
  };
  if (bs.size() > as.size()) fail();
  const std::size_t offset = as.size() - bs.size();
  std::vector<std::size_t> stride(as.size(), 0);
  std::size_t running = 1;
  for (std::size_t i = bs.size(); i-- > 0;) {
    if (bs[i] == as[i + offset]) {
      stride[i + offset] = running;
    } else if (bs[i] != 1) {
      fail();
    }
    running *= bs[i];
  }
  auto map = std::make_shared<std::vector<std::size_t>>(a.size());
  std::vector<std::size_t> index(as.size(), 0);
  std::size_t b_flat = 0;
  for (std::size_t flat = 0; flat < a.size(); ++flat) {
    (*map)[flat] = b_flat;
    for (std::size_t d = as.size(); d-- > 0;) {
      if (++index[d] < as[d]) {
        b_flat += stride[d];
        break;
      }
      b_flat -= stride[d] * (as[d] - 1);
      index[d] = 0;
    }
  }
  return map;
}

enum class BinaryOp { add, sub, mul };

Tensor binary(BinaryOp op, const Tensor& a, const Tensor& b, const char* name) {
  auto map = broadcast_map(a, b, name);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double y = bv[map ? (*map)[i] : i];
    switch (op) {
      case BinaryOp::add: out[i] = av[i] + y; break;
      case BinaryOp::sub: out[i] = av[i] - y; break;
      case BinaryOp::mul: out[i] = av[i] * y; break;
    }
  }
  Tensor result(a.shape(), std::move(out));
  if (should_record({&a, &b})) {
    record_op({a, b}, result, [a, b, map, op](const Tensor& o) {
      const auto g = o.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        if (op == BinaryOp::mul) {
          const auto bv = b.values();
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[map ? (*map)[i] : i];
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        const auto av = a.values();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t j = map ? (*map)[i] : i;
          switch (op) {
            case BinaryOp::add: gb[j] += g[i]; break;
            case BinaryOp::sub: gb[j] -= g[i]; break;
            case BinaryOp::mul: gb[j] += g[i] * av[i]; break;
          }
        }
      }
    });
  }
  return result;
}

template <typename Forward, typename Derivative>
Tensor unary(const Tensor& x, Forward forward, Derivative derivative) {
  const auto xv = x.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(xv[i]);
  Tensor result(x.shape(), std::move(out));
  if (should_record({&x})) {
    record_op({x}, result, [x, derivative](const Tensor& o) {
      const auto g = o.grad();
      const auto xv = x.values();
      const auto yv = o.values();
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * derivative(xv[i], yv[i]);
    });
  }
  return result;
}

void require_matrix(const Tensor& x, const char* op) {
  if (x.rank() != 2) {
    throw ShapeMismatch(std::string(op) + " expects a matrix, got " + shape_string(x.shape()));
  }
}

double logistic(double v) {
  // Split by sign so neither branch overflows exp().
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(BinaryOp::add, a, b, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(BinaryOp::sub, a, b, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(BinaryOp::mul, a, b, "mul"); }

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(
      x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  if (a.dim(1) != b.dim(0)) {
    throw ShapeMismatch("matmul inner dimensions differ: " + shape_string(a.shape()) + " x " +
                        shape_string(b.shape()));
  }
  std::vector<double> out(static_cast<std::size_t>(m * n));
  MatrixMap(out.data(), m, n).noalias() =
      ConstMatrixMap(a.values().data(), m, k) * ConstMatrixMap(b.values().data(), k, n);
  Tensor result(Shape{a.dim(0), b.dim(1)}, std::move(out));
  if (should_record({&a, &b})) {
    record_op({a, b}, result, [a, b, m, k, n](const Tensor& o) {
      ConstMatrixMap g(o.grad().data(), m, n);
      if (a.requires_grad()) {
        MatrixMap(a.grad_buffer().data(), m, k).noalias() +=
            g * ConstMatrixMap(b.values().data(), k, n).transpose();
      }
      if (b.requires_grad()) {
        MatrixMap(b.grad_buffer().data(), k, n).noalias() +=
            ConstMatrixMap(a.values().data(), m, k).transpose() * g;
      }
    });
  }
  return result;
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  Tensor result = Tensor::scalar(total);
  if (should_record({&x})) {
    record_op({x}, result, [x](const Tensor& o) {
      const double g = o.grad()[0];
      for (double& gx : x.grad_buffer()) gx += g;
    });
  }
  return result;
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeMismatch("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeMismatch("cannot reshape " + shape_string(x.shape()) + " to " +
                        shape_string(shape));
  }
  const auto xv = x.values();
  Tensor result(std::move(shape), std::vector<double>(xv.begin(), xv.end()));
  if (should_record({&x})) {
    record_op({x}, result, [x](const Tensor& o) {
      const auto g = o.grad();
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return result;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_matrix(a, "concat_cols");
  require_matrix(b, "concat_cols");
  if (a.dim(0) != b.dim(0)) {
    throw ShapeMismatch("concat_cols row counts differ: " + shape_string(a.shape()) + " vs " +
                        shape_string(b.shape()));
  }
  const std::size_t rows = a.dim(0), da = a.dim(1), db = b.dim(1), d = da + db;
  std::vector<double> out(rows * d);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.values().begin() + r * da, da, out.begin() + r * d);
    std::copy_n(b.values().begin() + r * db, db, out.begin() + r * d + da);
  }
  Tensor result(Shape{rows, d}, std::move(out));
  if (should_record({&a, &b})) {
    record_op({a, b}, result, [a, b, rows, da, db, d](const Tensor& o) {
      const auto g = o.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < da; ++c) ga[r * da + c] += g[r * d + c];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < db; ++c) gb[r * db + c] += g[r * d + da + c];
      }
    });
  }
  return result;
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_cols");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  if (begin + count > d) {
    throw ShapeMismatch("slice_cols range exceeds " + std::to_string(d) + " columns");
  }
  std::vector<double> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.values().begin() + r * d + begin, count, out.begin() + r * count);
  Tensor result(Shape{rows, count}, std::move(out));
  if (should_record({&x})) {
    record_op({x}, result, [x, rows, d, begin, count](const Tensor& o) {
      const auto g = o.grad();
      auto gx = x.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < count; ++c) gx[r * d + begin + c] += g[r * count + c];
    });
  }
  return result;
}

Tensor pad_cols(const Tensor& x, std::size_t width) {
  require_matrix(x, "pad_cols");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  if (width < d) throw ShapeMismatch("pad_cols target narrower than input");
  if (width == d) return x;
  std::vector<double> out(rows * width, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.values().begin() + r * d, d, out.begin() + r * width);
  Tensor result(Shape{rows, width}, std::move(out));
  if (should_record({&x})) {
    record_op({x}, result, [x, rows, d, width](const Tensor& o) {
      const auto g = o.grad();
      auto gx = x.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += g[r * width + c];
    });
  }
  return result;
}

Tensor select_step(const Tensor& seq, std::size_t t) {
  if (seq.rank() != 3) {
    throw ShapeMismatch("select_step expects [N,T,D], got " + shape_string(seq.shape()));
  }
  const std::size_t n = seq.dim(0), steps = seq.dim(1), d = seq.dim(2);
  if (t >= steps) throw ShapeMismatch("select_step index out of range");
  std::vector<double> out(n * d);
  for (std::size_t r = 0; r < n; ++r)
    std::copy_n(seq.values().begin() + (r * steps + t) * d, d, out.begin() + r * d);
  Tensor result(Shape{n, d}, std::move(out));
  if (should_record({&seq})) {
    record_op({seq}, result, [seq, n, steps, d, t](const Tensor& o) {
      const auto g = o.grad();
      auto gs = seq.grad_buffer();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) gs[(r * steps + t) * d + c] += g[r * d + c];
    });
  }
  return result;
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, logistic, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor silu(const Tensor& x) {
  return unary(
      x, [](double v) { return v * logistic(v); },
      [](double v, double) {
        const double s = logistic(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor softmax(const Tensor& x) {
  const std::size_t d = x.shape().back();
  const std::size_t rows = d == 0 ? 0 : x.size() / d;
  const auto xv = x.values();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * d;
    double* y = out.data() + r * d;
    const double peak = *std::max_element(in, in + d);
    double total = 0.0;
    for (std::size_t c = 0; c < d; ++c) total += y[c] = std::exp(in[c] - peak);
    for (std::size_t c = 0; c < d; ++c) y[c] /= total;
  }
  Tensor result(x.shape(), std::move(out));
  if (should_record({&x})) {
    record_op({x}, result, [x, rows, d](const Tensor& o) {
      const auto g = o.grad();
      const auto y = o.values();
      auto gx = x.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += g[r * d + c] * y[r * d + c];
        for (std::size_t c = 0; c < d; ++c)
          gx[r * d + c] += y[r * d + c] * (g[r * d + c] - dot);
      }
    });
  }
  return result;
}

}  // namespace fusenet
