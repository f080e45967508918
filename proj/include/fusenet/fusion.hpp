#pragma once

#include <cstddef>

#include "fusenet/layers.hpp"
#include "fusenet/rng.hpp"
#include "fusenet/tensor.hpp"

namespace fusenet {

struct FusedFeatures {
  Tensor matrix;  // [N, d_a + d_b]
  std::size_t d_a = 0;
  std::size_t d_b = 0;

  std::size_t dim() const { return d_a + d_b; }
};

/// Row-wise concatenation, a-features first. Throws BatchMismatch on unequal
/// row counts and ShapeMismatch when either side has zero columns.
FusedFeatures fuse(const Tensor& a, const Tensor& b);

/// Zero-pads [N, d] up to the next multiple of `steps`, then reshapes
/// row-major into [N, steps, padded / steps].
Tensor to_sequence(const Tensor& features, std::size_t steps);
inline Tensor to_sequence(const FusedFeatures& f, std::size_t steps) {
  return to_sequence(f.matrix, steps);
}

/// Gate parameters: w_* are [d_x, d_h], u_* are [d_h, d_h], b_* are [d_h].
struct LSTMParams {
  Tensor w_i, w_f, w_o, w_c;
  Tensor u_i, u_f, u_o, u_c;
  Tensor b_i, b_f, b_o, b_c;

  std::size_t input_dim() const { return w_i.dim(0); }
  std::size_t hidden_dim() const { return w_i.dim(1); }

  /// Fan-in scaled normal weights, zero biases.
  static LSTMParams random(std::size_t d_x, std::size_t d_h, Rng& rng);
  static LSTMParams zeros(std::size_t d_x, std::size_t d_h);
};

struct LSTMState {
  Tensor h;  // [N, d_h]
  Tensor c;  // [N, d_h]
};

/// i, f, o = sigmoid(x W + h U + b), g = tanh(x W_c + h U_c + b_c);
/// c' = f * c + i * g; h' = o * tanh(c').
LSTMState lstm_step(const Tensor& x_t, const Tensor& h_prev, const Tensor& c_prev,
                    const LSTMParams& p);

/// Runs an LSTM over [N, T, d_x] from zero state, t = 0..T-1 (or T-1..0 when
/// `reverse`), returning the final hidden state [N, d_h].
Tensor lstm_final_hidden(const Tensor& seq, const LSTMParams& p, bool reverse = false);

struct BiLSTMHead {
  LSTMParams forward_params;
  LSTMParams backward_params;
  DenseParams output;  // [2*d_h, n_classes]
  std::size_t seq_len = 8;

  std::size_t step_dim() const { return forward_params.input_dim(); }
  std::size_t hidden_dim() const { return forward_params.hidden_dim(); }
  std::size_t n_classes() const { return output.bias.dim(0); }

  /// Head for `fused_dim` input features; step_dim = ceil(fused_dim / seq_len).
  static BiLSTMHead build(std::size_t fused_dim, std::size_t seq_len, std::size_t hidden,
                          std::size_t n_classes, Rng& rng);
};

/// concat(h_forward_final, h_backward_final): [N, 2*d_h].
Tensor bilstm_forward(const Tensor& seq, const BiLSTMHead& head);

/// dense(hidden) pre-softmax scores, [N, n_classes].
Tensor head_logits(const Tensor& hidden, const BiLSTMHead& head);

/// softmax(dense(hidden)); rows sum to 1.
Tensor classify(const Tensor& hidden, const BiLSTMHead& head);

}  // namespace fusenet
