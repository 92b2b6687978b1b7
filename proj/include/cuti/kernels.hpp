// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "cuti/tensor.hpp"

// Dense compute kernels behind the backbone.
//
// The functions in cuti::kernels are OpenMP-parallel. Work is partitioned
// over output elements only (samples, output channels, output rows), never
// over a reduction axis, so results do not depend on the thread count.
// cuti::kernels::reference holds plain serial loops with the same
// signatures; tests check the two agree and the benchmark compares them.
//
// All convolutions are 3x3, stride 1, zero padding 1. Pooling is 2x2,
// stride 2, with odd trailing rows/columns dropped.

namespace cuti::kernels {

/// y[n,o,h,w] = b[o] + sum_{c,i,j} w[o,c,i,j] * x[n,c,h+i-1,w+j-1]
void conv3x3_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, Tensor& y);
/// dx from dy. dx is resized and overwritten.
void conv3x3_backward_input(const Tensor& dy, const Tensor& weight, Tensor& dx);
/// Accumulates parameter gradients into dweight / dbias.
void conv3x3_backward_params(const Tensor& x, const Tensor& dy, Tensor& dweight, Tensor& dbias);

void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<int>& argmax);
void maxpool2_backward(const Tensor& dy, const std::vector<int>& argmax, const std::vector<int>& input_shape,
                       Tensor& dx);

void relu_forward(Tensor& x);
/// Zeroes dy wherever the forward output was not positive.
void relu_backward(const Tensor& output, Tensor& dy);

/// x [N, in], weight [out, in], bias [out] -> y [N, out]
void linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, Tensor& y);
void linear_backward_input(const Tensor& dy, const Tensor& weight, Tensor& dx);
void linear_backward_params(const Tensor& x, const Tensor& dy, Tensor& dweight, Tensor& dbias);

/// Row-wise numerically stable softmax.
Tensor softmax_rows(const Tensor& logits);

namespace reference {

void conv3x3_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, Tensor& y);
void conv3x3_backward_input(const Tensor& dy, const Tensor& weight, Tensor& dx);
void conv3x3_backward_params(const Tensor& x, const Tensor& dy, Tensor& dweight, Tensor& dbias);
void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<int>& argmax);
void linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, Tensor& y);
void linear_backward_input(const Tensor& dy, const Tensor& weight, Tensor& dx);
void linear_backward_params(const Tensor& x, const Tensor& dy, Tensor& dweight, Tensor& dbias);

}  // namespace reference
}  // namespace cuti::kernels
