#pragma once

#include <cstddef>
#include <vector>

#include "stf/tensor.hpp"

// Differentiable operations. Feature maps are rank-3 C x H x W tensors;
// single-channel maps are rank-2 H x W.
namespace stf::ops {

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double factor);
/// Sum of all elements, returned as a one-element tensor.
Tensor sum(Tape& tape, const Tensor& a);

Tensor relu(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);

/// Same-size 2D convolution with zero padding of (m-1)/2 on each side.
/// kernel is C_out x C_in x m x m, bias is C_out; m must be odd.
Tensor conv2d_same(Tape& tape, const Tensor& input, const Tensor& kernel, const Tensor& bias,
                   std::size_t m);
/// Same as above with m taken from the kernel shape.
Tensor conv2d_same(Tape& tape, const Tensor& input, const Tensor& kernel, const Tensor& bias);

/// Max-stabilised softmax along one axis.
Tensor softmax_over_axis(Tape& tape, const Tensor& x, std::size_t axis);

Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b);
Tensor concat_channels(Tape& tape, const std::vector<Tensor>& parts);
Tensor slice_channels(Tape& tape, const Tensor& x, std::size_t begin, std::size_t count);

/// Multiplies every channel of `b` (C x H x W) pointwise by `a` (H x W).
Tensor hadamard_broadcast(Tape& tape, const Tensor& a, const Tensor& b);

/// Stacks equally-shaped tensors along a new leading axis.
Tensor stack(Tape& tape, const std::vector<Tensor>& parts);
/// Slice `index` of the leading axis, with that axis removed.
Tensor select(Tape& tape, const Tensor& x, std::size_t index);

/// Per-pixel projection: out(h,w) = sum_c x(c,h,w) * weight(h,w,c).
/// x is D x H x W, weight is H x W x D.
Tensor pixel_project(Tape& tape, const Tensor& x, const Tensor& weight);

/// (1 / (H*W)) * sum_{c,h,w} (pred - target)^2 * weight(h,w).
/// target never receives gradient; an undefined weight means all ones.
Tensor weighted_squared_error(Tape& tape, const Tensor& pred, const Tensor& target,
                              const Tensor& weight = Tensor());

}  // namespace stf::ops
