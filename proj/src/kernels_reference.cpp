// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

// Serial reference kernels. Direct transcriptions of the defining sums,
// kept for differential testing and as the benchmark baseline.

#include <limits>

#include "cuti/error.hpp"
#include "cuti/kernels.hpp"

namespace cuti::kernels::reference {

void conv3x3_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, Tensor& y) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = weight.dim(0);
  if (weight.dim(1) != C) throw InvalidInput("reference conv3x3: channel mismatch");
  y = Tensor({N, O, H, W});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          double acc = bias[static_cast<std::size_t>(o)];
          for (int c = 0; c < C; ++c)
            for (int i = 0; i < 3; ++i)
              for (int j = 0; j < 3; ++j) {
                const int hh = h + i - 1, ww = w + j - 1;
                if (hh < 0 || hh >= H || ww < 0 || ww >= W) continue;
                acc += weight.at(o, c, i, j) * x.at(n, c, hh, ww);
              }
          y.at(n, o, h, w) = acc;
        }
}

void conv3x3_backward_input(const Tensor& dy, const Tensor& weight, Tensor& dx) {
  const int N = dy.dim(0), O = dy.dim(1), H = dy.dim(2), W = dy.dim(3), C = weight.dim(1);
  dx = Tensor({N, C, H, W});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          for (int c = 0; c < C; ++c)
            for (int i = 0; i < 3; ++i)
              for (int j = 0; j < 3; ++j) {
                const int hh = h + i - 1, ww = w + j - 1;
                if (hh < 0 || hh >= H || ww < 0 || ww >= W) continue;
                dx.at(n, c, hh, ww) += weight.at(o, c, i, j) * dy.at(n, o, h, w);
              }
}

void conv3x3_backward_params(const Tensor& x, const Tensor& dy, Tensor& dweight, Tensor& dbias) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = dy.dim(1);
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          dbias[static_cast<std::size_t>(o)] += dy.at(n, o, h, w);
          for (int c = 0; c < C; ++c)
            for (int i = 0; i < 3; ++i)
              for (int j = 0; j < 3; ++j) {
                const int hh = h + i - 1, ww = w + j - 1;
                if (hh < 0 || hh >= H || ww < 0 || ww >= W) continue;
                dweight.at(o, c, i, j) += dy.at(n, o, h, w) * x.at(n, c, hh, ww);
              }
        }
}

void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<int>& argmax) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = H / 2, Wo = W / 2;
  y = Tensor({N, C, Ho, Wo});
  argmax.assign(y.size(), 0);
  std::size_t out = 0;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < Ho; ++h)
        for (int w = 0; w < Wo; ++w, ++out) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_index = 0;
          for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
              const std::size_t idx =
                  ((static_cast<std::size_t>(n) * C + c) * H + (2 * h + i)) * W + (2 * w + j);
              if (x[idx] > best) {
                best = x[idx];
                best_index = idx;
              }
            }
          y[out] = best;
          argmax[out] = static_cast<int>(best_index);
        }
}

void linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, Tensor& y) {
  const int N = x.dim(0), I = x.dim(1), O = weight.dim(0);
  y = Tensor({N, O});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o) {
      double acc = bias[static_cast<std::size_t>(o)];
      for (int i = 0; i < I; ++i) acc += weight.at(o, i) * x.at(n, i);
      y.at(n, o) = acc;
    }
}

void linear_backward_input(const Tensor& dy, const Tensor& weight, Tensor& dx) {
  const int N = dy.dim(0), O = weight.dim(0), I = weight.dim(1);
  dx = Tensor({N, I});
  for (int n = 0; n < N; ++n)
    for (int i = 0; i < I; ++i)
      for (int o = 0; o < O; ++o) dx.at(n, i) += dy.at(n, o) * weight.at(o, i);
}

void linear_backward_params(const Tensor& x, const Tensor& dy, Tensor& dweight, Tensor& dbias) {
  const int N = x.dim(0), I = x.dim(1), O = dy.dim(1);
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o) {
      dbias[static_cast<std::size_t>(o)] += dy.at(n, o);
      for (int i = 0; i < I; ++i) dweight.at(o, i) += dy.at(n, o) * x.at(n, i);
    }
}

}  // namespace cuti::kernels::reference
