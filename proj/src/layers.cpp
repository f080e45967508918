#include "fusenet/layers.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>

#include "fusenet/error.hpp"
#include "fusenet/ops.hpp"

namespace fusenet {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

Tensor kaiming_tensor(Shape shape, std::size_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> values(shape_size(shape));
  for (double& v : values) v = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(values));
}

void require_nchw(const Tensor& x, const char* op) {
  if (x.rank() != 4) {
    throw ShapeMismatch(std::string(op) + " expects [N,C,H,W], got " + shape_string(x.shape()));
  }
}

std::size_t conv_extent(std::size_t size, std::size_t kernel, std::size_t stride,
                        std::size_t padding, const char* op) {
  const std::size_t padded = size + 2 * padding;
  if (padded < kernel) {
    throw DegenerateOutput(std::string(op) + ": kernel " + std::to_string(kernel) +
                           " exceeds padded extent " + std::to_string(padded));
  }
  return (padded - kernel) / stride + 1;
}

struct ConvGeometry {
  std::size_t n, c, h, w, oc, kh, kw, stride, pad, oh, ow;
};

void im2col(const double* in, const ConvGeometry& g, double* cols) {
  const std::size_t l = g.oh * g.ow;
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = cols + ((ch * g.kh + i) * g.kw + j) * l;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                          static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                            static_cast<std::ptrdiff_t>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                ix < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.ow + ox] = inside ? in[(ch * g.h + iy) * g.w + ix] : 0.0;
          }
        }
      }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* out) {
  const std::size_t l = g.oh * g.ow;
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t i = 0; i < g.kh; ++i)
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = cols + ((ch * g.kh + i) * g.kw + j) * l;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                          static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                            static_cast<std::ptrdiff_t>(g.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            out[(ch * g.h + iy) * g.w + ix] += row[oy * g.ow + ox];
          }
        }
      }
}

Tensor conv2d_dense(const Tensor& input, const Conv2dParams& p, const ConvGeometry& g) {
  const std::size_t k = g.c * g.kh * g.kw;
  const std::size_t l = g.oh * g.ow;
  auto cols = std::make_shared<std::vector<double>>(g.n * k * l);
  std::vector<double> out(g.n * g.oc * l);
  ConstMatrixMap kernel(p.kernel.values().data(), g.oc, k);
  const auto bias = p.bias.values();
  for (std::size_t n = 0; n < g.n; ++n) {
    double* col = cols->data() + n * k * l;
    im2col(input.values().data() + n * g.c * g.h * g.w, g, col);
    MatrixMap y(out.data() + n * g.oc * l, g.oc, l);
    y.noalias() = kernel * ConstMatrixMap(col, k, l);
    for (std::size_t o = 0; o < g.oc; ++o) y.row(o).array() += bias[o];
  }
  Tensor result(Shape{g.n, g.oc, g.oh, g.ow}, std::move(out));
  const Tensor& kt = p.kernel;
  const Tensor& bt = p.bias;
  if (should_record({&input, &kt, &bt})) {
    record_op({input, kt, bt}, result, [input, kt, bt, cols, g, k, l](const Tensor& o) {
      const double* grad = o.grad().data();
      for (std::size_t n = 0; n < g.n; ++n) {
        ConstMatrixMap gy(grad + n * g.oc * l, g.oc, l);
        ConstMatrixMap col(cols->data() + n * k * l, k, l);
        if (kt.requires_grad()) {
          MatrixMap(kt.grad_buffer().data(), g.oc, k).noalias() += gy * col.transpose();
        }
        if (bt.requires_grad()) {
          auto gb = bt.grad_buffer();
          for (std::size_t oc = 0; oc < g.oc; ++oc) gb[oc] += gy.row(oc).sum();
        }
        if (input.requires_grad()) {
          RowMatrix dcol = ConstMatrixMap(kt.values().data(), g.oc, k).transpose() * gy;
          col2im_add(dcol.data(), g, input.grad_buffer().data() + n * g.c * g.h * g.w);
        }
      }
    });
  }
  return result;
}

Tensor conv2d_depthwise(const Tensor& input, const Conv2dParams& p, const ConvGeometry& g) {
  const auto in = input.values();
  const auto kv = p.kernel.values();
  const auto bias = p.bias.values();
  std::vector<double> out(g.n * g.c * g.oh * g.ow);
  auto at = [g](std::size_t oy, std::size_t i, std::size_t ox, std::size_t j,
                 std::ptrdiff_t& iy, std::ptrdiff_t& ix) {
    iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
    ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
    return iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
           ix < static_cast<std::ptrdiff_t>(g.w);
  };
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t c = 0; c < g.c; ++c) {
      const double* plane = in.data() + (n * g.c + c) * g.h * g.w;
      const double* kernel = kv.data() + c * g.kh * g.kw;
      double* y = out.data() + (n * g.c + c) * g.oh * g.ow;
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
          double acc = bias[c];
          for (std::size_t i = 0; i < g.kh; ++i)
            for (std::size_t j = 0; j < g.kw; ++j) {
              std::ptrdiff_t iy, ix;
              if (at(oy, i, ox, j, iy, ix)) acc += plane[iy * g.w + ix] * kernel[i * g.kw + j];
            }
          y[oy * g.ow + ox] = acc;
        }
    }
  Tensor result(Shape{g.n, g.c, g.oh, g.ow}, std::move(out));
  const Tensor& kt = p.kernel;
  const Tensor& bt = p.bias;
  if (should_record({&input, &kt, &bt})) {
    record_op({input, kt, bt}, result, [input, kt, bt, g, at](const Tensor& o) {
      const auto grad = o.grad();
      const auto in = input.values();
      const auto kv = kt.values();
      std::span<double> gx, gk, gb;
      if (input.requires_grad()) gx = input.grad_buffer();
      if (kt.requires_grad()) gk = kt.grad_buffer();
      if (bt.requires_grad()) gb = bt.grad_buffer();
      for (std::size_t n = 0; n < g.n; ++n)
        for (std::size_t c = 0; c < g.c; ++c) {
          const std::size_t plane = (n * g.c + c) * g.h * g.w;
          const double* gy = grad.data() + (n * g.c + c) * g.oh * g.ow;
          for (std::size_t oy = 0; oy < g.oh; ++oy)
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const double d = gy[oy * g.ow + ox];
              if (!gb.empty()) gb[c] += d;
              for (std::size_t i = 0; i < g.kh; ++i)
                for (std::size_t j = 0; j < g.kw; ++j) {
                  std::ptrdiff_t iy, ix;
                  if (!at(oy, i, ox, j, iy, ix)) continue;
                  const std::size_t src = plane + iy * g.w + ix;
                  const std::size_t kidx = c * g.kh * g.kw + i * g.kw + j;
                  if (!gx.empty()) gx[src] += d * kv[kidx];
                  if (!gk.empty()) gk[kidx] += d * in[src];
                }
            }
        }
    });
  }
  return result;
}

}  // namespace

Conv2dParams Conv2dParams::kaiming(std::size_t in_ch, std::size_t out_ch, std::size_t kernel_size,
                                   std::size_t stride, std::size_t padding, bool depthwise,
                                   Rng& rng) {
  Conv2dParams p;
  const std::size_t per_filter_in = depthwise ? 1 : in_ch;
  const std::size_t channels = depthwise ? in_ch : out_ch;
  p.kernel = kaiming_tensor(Shape{channels, per_filter_in, kernel_size, kernel_size},
                            per_filter_in * kernel_size * kernel_size, rng);
  p.bias = Tensor::zeros(Shape{channels});
  p.stride = stride;
  p.padding = padding;
  p.depthwise = depthwise;
  return p;
}

void Conv2dParams::validate() const {
  if (kernel.rank() != 4) throw ShapeMismatch("conv kernel must be rank 4");
  if (stride < 1) throw ShapeMismatch("conv stride must be >= 1");
  if (kernel_h() < 1 || kernel_w() < 1) throw ShapeMismatch("conv kernel must be non-empty");
  if (depthwise && kernel.dim(1) != 1) {
    throw ShapeMismatch("depthwise kernel must be [ch,1,kh,kw], got " +
                        shape_string(kernel.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != out_channels()) {
    throw ShapeMismatch("conv bias must be [out_ch]");
  }
}

DenseParams DenseParams::kaiming(std::size_t d_in, std::size_t d_out, Rng& rng) {
  return {kaiming_tensor(Shape{d_in, d_out}, d_in, rng), Tensor::zeros(Shape{d_out})};
}

DenseParams DenseParams::zeros(std::size_t d_in, std::size_t d_out) {
  return {Tensor::zeros(Shape{d_in, d_out}), Tensor::zeros(Shape{d_out})};
}

SEBlockParams SEBlockParams::kaiming(std::size_t channels, std::size_t ratio, Rng& rng) {
  if (ratio == 0 || channels % ratio != 0) {
    throw ShapeMismatch("SE reduction ratio " + std::to_string(ratio) + " does not divide " +
                        std::to_string(channels) + " channels");
  }
  const std::size_t hidden = channels / ratio;
  return {DenseParams::kaiming(channels, hidden, rng), DenseParams::kaiming(hidden, channels, rng),
          ratio};
}

NormParams NormParams::identity(std::size_t channels) {
  NormParams p;
  p.gamma = Tensor::full(Shape{channels}, 1.0);
  p.beta = Tensor::zeros(Shape{channels});
  p.running_mean = Tensor::zeros(Shape{channels});
  p.running_var = Tensor::full(Shape{channels}, 1.0);
  return p;
}

MBConvParams MBConvParams::kaiming(std::size_t in_ch, std::size_t out_ch, std::size_t expansion,
                                   std::size_t kernel_size, std::size_t stride,
                                   std::size_t se_ratio, Rng& rng) {
  MBConvParams p;
  p.expansion_factor = expansion;
  const std::size_t mid = in_ch * expansion;
  if (expansion != 1) {
    p.expand_conv = Conv2dParams::kaiming(in_ch, mid, 1, 1, 0, false, rng);
    p.expand_norm = NormParams::identity(mid);
  }
  p.depthwise_conv = Conv2dParams::kaiming(mid, mid, kernel_size, stride, kernel_size / 2, true, rng);
  p.depthwise_norm = NormParams::identity(mid);
  p.se = SEBlockParams::kaiming(mid, se_ratio, rng);
  p.project_conv = Conv2dParams::kaiming(mid, out_ch, 1, 1, 0, false, rng);
  p.project_norm = NormParams::identity(out_ch);
  p.use_residual = stride == 1 && in_ch == out_ch;
  return p;
}

Tensor conv2d(const Tensor& input, const Conv2dParams& p) {
  require_nchw(input, "conv2d");
  p.validate();
  if (input.dim(1) != p.in_channels()) {
    throw ShapeMismatch("conv2d expects " + std::to_string(p.in_channels()) +
                        " input channels, got " + std::to_string(input.dim(1)));
  }
  ConvGeometry g{};
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.oc = p.out_channels();
  g.kh = p.kernel_h();
  g.kw = p.kernel_w();
  g.stride = p.stride;
  g.pad = p.padding;
  g.oh = conv_extent(g.h, g.kh, g.stride, g.pad, "conv2d");
  g.ow = conv_extent(g.w, g.kw, g.stride, g.pad, "conv2d");
  return p.depthwise ? conv2d_depthwise(input, p, g) : conv2d_dense(input, p, g);
}

Tensor maxpool2d(const Tensor& input, std::size_t window, std::size_t stride) {
  require_nchw(input, "maxpool2d");
  if (window < 1 || stride < 1) throw ShapeMismatch("maxpool2d window and stride must be >= 1");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (window > h || window > w) {
    throw DegenerateOutput("maxpool2d window " + std::to_string(window) + " exceeds " +
                           std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  const auto in = input.values();
  std::vector<double> out(n * c * oh * ow);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = base + oy * stride * w + ox * stride;
        for (std::size_t i = 0; i < window; ++i)
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = base + (oy * stride + i) * w + ox * stride + j;
            if (in[idx] > in[best]) best = idx;
          }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        out[o] = in[best];
        (*argmax)[o] = best;
      }
  }
  Tensor result(Shape{n, c, oh, ow}, std::move(out));
  if (should_record({&input})) {
    record_op({input}, result, [input, argmax](const Tensor& o) {
      const auto g = o.grad();
      auto gx = input.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
    });
  }
  return result;
}

Tensor global_avg_pool(const Tensor& input) {
  require_nchw(input, "global_avg_pool");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (hw == 0) throw ShapeMismatch("global_avg_pool needs non-empty planes");
  const auto in = input.values();
  std::vector<double> out(n * c);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    double total = 0.0;
    for (std::size_t i = 0; i < hw; ++i) total += in[plane * hw + i];
    out[plane] = total / static_cast<double>(hw);
  }
  Tensor result(Shape{n, c}, std::move(out));
  if (should_record({&input})) {
    record_op({input}, result, [input, hw](const Tensor& o) {
      const auto g = o.grad();
      auto gx = input.grad_buffer();
      const double inv = 1.0 / static_cast<double>(hw);
      for (std::size_t plane = 0; plane < g.size(); ++plane)
        for (std::size_t i = 0; i < hw; ++i) gx[plane * hw + i] += g[plane] * inv;
    });
  }
  return result;
}

Tensor activation(Activation kind, const Tensor& x) {
  switch (kind) {
    case Activation::relu: return relu(x);
    case Activation::sigmoid: return sigmoid(x);
    case Activation::tanh: return tanh(x);
    case Activation::softmax: return softmax(x);
    case Activation::silu: return silu(x);
  }
  throw InvalidArgument("unknown activation");
}

Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (bias.rank() != 1 || weight.rank() != 2 || bias.dim(0) != weight.dim(1)) {
    throw ShapeMismatch("dense bias " + shape_string(bias.shape()) + " does not match weight " +
                        shape_string(weight.shape()));
  }
  return add(matmul(x, weight), bias);
}

Tensor se_block(const Tensor& x, const SEBlockParams& p) {
  require_nchw(x, "se_block");
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (p.reduction_ratio == 0 || c % p.reduction_ratio != 0) {
    throw ShapeMismatch("SE reduction ratio " + std::to_string(p.reduction_ratio) +
                        " does not divide " + std::to_string(c) + " channels");
  }
  if (p.reduce.weight.dim(0) != c || p.reduce.weight.dim(1) != c / p.reduction_ratio) {
    throw ShapeMismatch("SE reduce weights do not match " + std::to_string(c) + " channels");
  }
  const Tensor squeeze = global_avg_pool(x);
  const Tensor excitation = sigmoid(dense(relu(dense(squeeze, p.reduce)), p.expand));
  return mul(x, reshape(excitation, Shape{n, c, 1, 1}));
}

Tensor batch_norm(const Tensor& x, NormParams& p, bool training) {
  require_nchw(x, "batch_norm");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (p.gamma.size() != c || p.beta.size() != c) {
    throw ShapeMismatch("batch_norm parameters do not match " + std::to_string(c) + " channels");
  }
  const std::size_t count = n * hw;
  const auto in = x.values();
  auto inv_std = std::make_shared<std::vector<double>>(c);
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  std::vector<double> mu(c), var(c);
  if (training) {
    if (count == 0) throw ShapeMismatch("batch_norm training needs a non-empty batch");
    for (std::size_t ch = 0; ch < c; ++ch) {
      double total = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) total += in[(b * c + ch) * hw + i];
      mu[ch] = total / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = in[(b * c + ch) * hw + i] - mu[ch];
          sq += d * d;
        }
      var[ch] = sq / static_cast<double>(count);
    }
    auto rm = p.running_mean.mutable_values();
    auto rv = p.running_var.mutable_values();
    const double unbias =
        count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      rm[ch] = (1.0 - p.momentum) * rm[ch] + p.momentum * mu[ch];
      rv[ch] = (1.0 - p.momentum) * rv[ch] + p.momentum * var[ch] * unbias;
    }
  } else {
    const auto rm = p.running_mean.values();
    const auto rv = p.running_var.values();
    std::copy(rm.begin(), rm.end(), mu.begin());
    std::copy(rv.begin(), rv.end(), var.begin());
  }
  const auto gamma = p.gamma.values();
  const auto beta = p.beta.values();
  std::vector<double> out(x.size());
  for (std::size_t ch = 0; ch < c; ++ch) (*inv_std)[ch] = 1.0 / std::sqrt(var[ch] + p.epsilon);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i) {
        const std::size_t idx = (b * c + ch) * hw + i;
        (*xhat)[idx] = (in[idx] - mu[ch]) * (*inv_std)[ch];
        out[idx] = gamma[ch] * (*xhat)[idx] + beta[ch];
      }
  Tensor result(x.shape(), std::move(out));
  const Tensor& gt = p.gamma;
  const Tensor& bt = p.beta;
  if (should_record({&x, &gt, &bt})) {
    record_op({x, gt, bt}, result,
              [x, gt, bt, inv_std, xhat, n, c, hw, count, training](const Tensor& o) {
                const auto g = o.grad();
                const auto gamma = gt.values();
                std::vector<double> dbeta(c, 0.0), dgamma(c, 0.0);
                for (std::size_t b = 0; b < n; ++b)
                  for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t i = 0; i < hw; ++i) {
                      const std::size_t idx = (b * c + ch) * hw + i;
                      dbeta[ch] += g[idx];
                      dgamma[ch] += g[idx] * (*xhat)[idx];
                    }
                if (gt.requires_grad()) {
                  auto gg = gt.grad_buffer();
                  for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += dgamma[ch];
                }
                if (bt.requires_grad()) {
                  auto gb = bt.grad_buffer();
                  for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += dbeta[ch];
                }
                if (!x.requires_grad()) return;
                auto gx = x.grad_buffer();
                const double m = static_cast<double>(count);
                for (std::size_t b = 0; b < n; ++b)
                  for (std::size_t ch = 0; ch < c; ++ch) {
                    const double k = gamma[ch] * (*inv_std)[ch];
                    for (std::size_t i = 0; i < hw; ++i) {
                      const std::size_t idx = (b * c + ch) * hw + i;
                      if (training) {
                        // dxhat summed over the channel is gamma * dbeta, and
                        // dxhat . xhat is gamma * dgamma.
                        gx[idx] += k * (g[idx] - dbeta[ch] / m - (*xhat)[idx] * dgamma[ch] / m);
                      } else {
                        gx[idx] += k * g[idx];
                      }
                    }
                  }
              });
  }
  return result;
}

Tensor mbconv(const Tensor& x, MBConvParams& p, bool training) {
  require_nchw(x, "mbconv");
  Tensor h = x;
  if (p.expand_conv) h = silu(batch_norm(conv2d(h, *p.expand_conv), *p.expand_norm, training));
  h = silu(batch_norm(conv2d(h, p.depthwise_conv), p.depthwise_norm, training));
  h = se_block(h, p.se);
  h = batch_norm(conv2d(h, p.project_conv), p.project_norm, training);
  if (p.use_residual) {
    if (h.shape() != x.shape()) {
      throw ShapeMismatch("mbconv residual needs matching shapes, got " + shape_string(h.shape()) +
                          " vs " + shape_string(x.shape()));
    }
    h = add(x, h);
  }
  return h;
}

}  // namespace fusenet
