#pragma once

#include "skpn/tensor.hpp"

namespace skpn {

// Same-size 2-D cross-correlation with edge-replicated borders.
//   input   [N, Cin, H, W]
//   weights [Cout, Cin / groups, kh, kw], kh and kw odd
//   bias    [Cout]
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, int groups = 1);

Tensor relu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor square(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor reduce_mean(const Tensor& x);

// Max-shifted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor softmax_vec(const Tensor& x);

// mean |a - b|, with a zero subgradient where a == b.
Tensor l1_loss(const Tensor& a, const Tensor& b);

}  // namespace skpn
