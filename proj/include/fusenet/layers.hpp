#pragma once

#include <cstddef>
#include <optional>

#include "fusenet/rng.hpp"
#include "fusenet/tensor.hpp"

namespace fusenet {

/// kernel: [out_ch, in_ch, kh, kw], or [ch, 1, kh, kw] when depthwise.
struct Conv2dParams {
  Tensor kernel;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool depthwise = false;

  std::size_t out_channels() const { return kernel.dim(0); }
  std::size_t in_channels() const { return depthwise ? kernel.dim(0) : kernel.dim(1); }
  std::size_t kernel_h() const { return kernel.dim(2); }
  std::size_t kernel_w() const { return kernel.dim(3); }

  /// Kaiming-normal kernel (fan-in scaled), zero bias.
  static Conv2dParams kaiming(std::size_t in_ch, std::size_t out_ch, std::size_t kernel_size,
                              std::size_t stride, std::size_t padding, bool depthwise, Rng& rng);
  void validate() const;
};

struct DenseParams {
  Tensor weight;  // [d_in, d_out]
  Tensor bias;    // [d_out]

  static DenseParams kaiming(std::size_t d_in, std::size_t d_out, Rng& rng);
  static DenseParams zeros(std::size_t d_in, std::size_t d_out);
};

struct SEBlockParams {
  DenseParams reduce;  // [ch, ch/r]
  DenseParams expand;  // [ch/r, ch]
  std::size_t reduction_ratio = 4;

  static SEBlockParams kaiming(std::size_t channels, std::size_t ratio, Rng& rng);
};

struct NormParams {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;

  /// gamma = 1, beta = 0, running stats (0, 1).
  static NormParams identity(std::size_t channels);
};

struct MBConvParams {
  std::size_t expansion_factor = 1;
  std::optional<Conv2dParams> expand_conv;  // absent when expansion_factor == 1
  std::optional<NormParams> expand_norm;
  Conv2dParams depthwise_conv;
  NormParams depthwise_norm;
  SEBlockParams se;
  Conv2dParams project_conv;
  NormParams project_norm;
  bool use_residual = false;

  static MBConvParams kaiming(std::size_t in_ch, std::size_t out_ch, std::size_t expansion,
                              std::size_t kernel_size, std::size_t stride, std::size_t se_ratio,
                              Rng& rng);
};

/// Zero-padded cross-correlation. Output spatial size is
/// (H + 2*padding - kh) / stride + 1 (integer division).
Tensor conv2d(const Tensor& input, const Conv2dParams& p);

/// Ties route the gradient to the first maximum in row-major window order.
Tensor maxpool2d(const Tensor& input, std::size_t window, std::size_t stride);

/// [N,C,H,W] -> [N,C].
Tensor global_avg_pool(const Tensor& input);

enum class Activation { relu, sigmoid, tanh, softmax, silu };
Tensor activation(Activation kind, const Tensor& x);

/// x W + b.
Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias);
inline Tensor dense(const Tensor& x, const DenseParams& p) { return dense(x, p.weight, p.bias); }

/// x scaled per channel by sigmoid(expand(relu(reduce(gap(x))))).
Tensor se_block(const Tensor& x, const SEBlockParams& p);

/// In training mode, normalizes by batch statistics and folds them into the
/// running stats (unbiased variance); otherwise uses the running stats. A
/// batch of one image is accepted but its statistics are high-variance.
Tensor batch_norm(const Tensor& x, NormParams& p, bool training);

/// expand (1x1 conv, norm, silu) -> depthwise (conv, norm, silu) -> SE ->
/// project (1x1 conv, norm), plus the input when use_residual.
Tensor mbconv(const Tensor& x, MBConvParams& p, bool training);

}  // namespace fusenet
