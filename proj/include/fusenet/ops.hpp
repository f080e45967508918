#pragma once

#include <cstddef>

#include "fusenet/tensor.hpp"

namespace fusenet {

// Elementwise arithmetic. `b` may broadcast onto `a`: shapes are aligned on
// the right and every dim of `b` must equal the matching dim of `a` or be 1.
// `a` itself never broadcasts, so the result always has a's shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& x) { return scale(x, s); }
inline Tensor operator-(const Tensor& x) { return scale(x, -1.0); }

/// [m,k] x [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Sum / mean of all elements, as a [1] tensor.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);

/// Concatenate two [N,*] matrices along columns.
Tensor concat_cols(const Tensor& a, const Tensor& b);
/// Columns [begin, begin+count) of an [N,D] matrix.
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
/// Right-pads an [N,D] matrix with zero columns up to `width`.
Tensor pad_cols(const Tensor& x, std::size_t width);
/// Step t of an [N,T,D] sequence, as [N,D].
Tensor select_step(const Tensor& seq, std::size_t t);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
/// x * sigmoid(x).
Tensor silu(const Tensor& x);
/// Softmax over the last dimension.
Tensor softmax(const Tensor& x);

}  // namespace fusenet
