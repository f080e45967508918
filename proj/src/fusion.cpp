#include "fusenet/fusion.hpp"

#include <cmath>

#include "fusenet/error.hpp"
#include "fusenet/ops.hpp"

namespace fusenet {

namespace {

Tensor scaled_normal(Shape shape, double stddev, Rng& rng) {
  std::vector<double> values(shape_size(shape));
  for (double& v : values) v = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(values));
}

Tensor gate(const Tensor& x, const Tensor& h, const Tensor& w, const Tensor& u, const Tensor& b) {
  return add(add(matmul(x, w), matmul(h, u)), b);
}

}  // namespace

FusedFeatures fuse(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeMismatch("fuse expects [N,d] feature matrices");
  }
  if (a.dim(0) != b.dim(0)) {
    throw BatchMismatch("fuse batch sizes differ: " + std::to_string(a.dim(0)) + " vs " +
                        std::to_string(b.dim(0)));
  }
  if (a.dim(1) == 0 || b.dim(1) == 0) throw ShapeMismatch("fuse needs non-empty feature vectors");
  return {concat_cols(a, b), a.dim(1), b.dim(1)};
}

Tensor to_sequence(const Tensor& features, std::size_t steps) {
  if (steps < 1) throw InvalidArgument("sequence length must be >= 1");
  if (features.rank() != 2) throw ShapeMismatch("to_sequence expects [N,d]");
  const std::size_t n = features.dim(0), d = features.dim(1);
  const std::size_t step_dim = (d + steps - 1) / steps;
  return reshape(pad_cols(features, step_dim * steps), Shape{n, steps, step_dim});
}

LSTMParams LSTMParams::random(std::size_t d_x, std::size_t d_h, Rng& rng) {
  const double sx = 1.0 / std::sqrt(static_cast<double>(d_x));
  const double sh = 1.0 / std::sqrt(static_cast<double>(d_h));
  LSTMParams p;
  for (Tensor* w : {&p.w_i, &p.w_f, &p.w_o, &p.w_c}) *w = scaled_normal({d_x, d_h}, sx, rng);
  for (Tensor* u : {&p.u_i, &p.u_f, &p.u_o, &p.u_c}) *u = scaled_normal({d_h, d_h}, sh, rng);
  for (Tensor* b : {&p.b_i, &p.b_f, &p.b_o, &p.b_c}) *b = Tensor::zeros({d_h});
  return p;
}

LSTMParams LSTMParams::zeros(std::size_t d_x, std::size_t d_h) {
  LSTMParams p;
  for (Tensor* w : {&p.w_i, &p.w_f, &p.w_o, &p.w_c}) *w = Tensor::zeros({d_x, d_h});
  for (Tensor* u : {&p.u_i, &p.u_f, &p.u_o, &p.u_c}) *u = Tensor::zeros({d_h, d_h});
  for (Tensor* b : {&p.b_i, &p.b_f, &p.b_o, &p.b_c}) *b = Tensor::zeros({d_h});
  return p;
}

LSTMState lstm_step(const Tensor& x_t, const Tensor& h_prev, const Tensor& c_prev,
                    const LSTMParams& p) {
  const std::size_t d_h = p.hidden_dim();
  if (x_t.rank() != 2 || x_t.dim(1) != p.input_dim()) {
    throw ShapeMismatch("lstm_step input " + shape_string(x_t.shape()) + " does not match d_x=" +
                        std::to_string(p.input_dim()));
  }
  const Shape state_shape{x_t.dim(0), d_h};
  if (h_prev.shape() != state_shape || c_prev.shape() != state_shape) {
    throw ShapeMismatch("lstm_step state must be " + shape_string(state_shape));
  }
  const Tensor i = sigmoid(gate(x_t, h_prev, p.w_i, p.u_i, p.b_i));
  const Tensor f = sigmoid(gate(x_t, h_prev, p.w_f, p.u_f, p.b_f));
  const Tensor o = sigmoid(gate(x_t, h_prev, p.w_o, p.u_o, p.b_o));
  const Tensor g = tanh(gate(x_t, h_prev, p.w_c, p.u_c, p.b_c));
  const Tensor c = add(mul(f, c_prev), mul(i, g));
  return {mul(o, tanh(c)), c};
}

Tensor lstm_final_hidden(const Tensor& seq, const LSTMParams& p, bool reverse) {
  if (seq.rank() != 3 || seq.dim(2) != p.input_dim()) {
    throw ShapeMismatch("LSTM sequence " + shape_string(seq.shape()) + " does not match d_x=" +
                        std::to_string(p.input_dim()));
  }
  const std::size_t n = seq.dim(0), steps = seq.dim(1);
  LSTMState state{Tensor::zeros({n, p.hidden_dim()}), Tensor::zeros({n, p.hidden_dim()})};
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t t = reverse ? steps - 1 - k : k;
    state = lstm_step(select_step(seq, t), state.h, state.c, p);
  }
  return state.h;
}

BiLSTMHead BiLSTMHead::build(std::size_t fused_dim, std::size_t seq_len, std::size_t hidden,
                             std::size_t n_classes, Rng& rng) {
  if (seq_len < 1 || hidden < 1 || fused_dim < 1 || n_classes < 1) {
    throw InvalidArgument("head dimensions must be >= 1");
  }
  const std::size_t step_dim = (fused_dim + seq_len - 1) / seq_len;
  BiLSTMHead head;
  head.forward_params = LSTMParams::random(step_dim, hidden, rng);
  head.backward_params = LSTMParams::random(step_dim, hidden, rng);
  head.output = DenseParams::kaiming(2 * hidden, n_classes, rng);
  head.seq_len = seq_len;
  return head;
}

Tensor bilstm_forward(const Tensor& seq, const BiLSTMHead& head) {
  if (seq.rank() != 3 || seq.dim(1) != head.seq_len || seq.dim(2) != head.step_dim()) {
    throw ShapeMismatch("Bi-LSTM expects [N," + std::to_string(head.seq_len) + "," +
                        std::to_string(head.step_dim()) + "], got " + shape_string(seq.shape()));
  }
  return concat_cols(lstm_final_hidden(seq, head.forward_params, false),
                     lstm_final_hidden(seq, head.backward_params, true));
}

Tensor head_logits(const Tensor& hidden, const BiLSTMHead& head) {
  if (hidden.rank() != 2 || hidden.dim(1) != 2 * head.hidden_dim()) {
    throw ShapeMismatch("classifier expects [N," + std::to_string(2 * head.hidden_dim()) +
                        "], got " + shape_string(hidden.shape()));
  }
  return dense(hidden, head.output);
}

Tensor classify(const Tensor& hidden, const BiLSTMHead& head) {
  return softmax(head_logits(hidden, head));
}

}  // namespace fusenet
