// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#include "cuti/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cuti/error.hpp"

namespace cuti::kernels {

namespace {

void check_conv_shapes(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 4) throw InvalidInput("conv3x3: input must be [N, C, H, W], got " + x.shape_string());
  if (weight.rank() != 4 || weight.dim(1) != x.dim(1) || weight.dim(2) != 3 || weight.dim(3) != 3) {
    throw InvalidInput("conv3x3: weight " + weight.shape_string() + " incompatible with input " + x.shape_string());
  }
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) throw InvalidInput("conv3x3: bias shape mismatch");
}

void ensure_shape(Tensor& t, const std::vector<int>& shape) {
  if (t.shape() != shape) {
    t = Tensor(shape);
  } else {
    t.fill(0.0);
  }
}

// Valid output range for a tap offset d in [-1, 1] over an axis of length n.
inline int lo(int d) { return std::max(0, -d); }
inline int hi(int n, int d) { return std::min(n, n - d); }

}  // namespace

void conv3x3_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, Tensor& y) {
  check_conv_shapes(x, weight, bias);
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = weight.dim(0);
  ensure_shape(y, {N, O, H, W});
  const double* wd = weight.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int o = 0; o < O; ++o) {
      double* out = y.plane(n, o);
      std::fill(out, out + static_cast<std::ptrdiff_t>(H) * W, bias[static_cast<std::size_t>(o)]);
      for (int c = 0; c < C; ++c) {
        const double* in = x.plane(n, c);
        const double* k = wd + (static_cast<std::size_t>(o) * C + c) * 9;
        for (int i = 0; i < 3; ++i) {
          const int dh = i - 1;
          for (int j = 0; j < 3; ++j) {
            const int dw = j - 1;
            const double wv = k[i * 3 + j];
            const int w0 = lo(dw), w1 = hi(W, dw);
            for (int h = lo(dh); h < hi(H, dh); ++h) {
              double* orow = out + static_cast<std::ptrdiff_t>(h) * W;
              const double* irow = in + static_cast<std::ptrdiff_t>(h + dh) * W + dw;
#pragma omp simd
              for (int w = w0; w < w1; ++w) orow[w] += wv * irow[w];
            }
          }
        }
      }
    }
  }
}

void conv3x3_backward_input(const Tensor& dy, const Tensor& weight, Tensor& dx) {
  if (dy.rank() != 4 || weight.rank() != 4 || dy.dim(1) != weight.dim(0)) {
    throw InvalidInput("conv3x3_backward_input: shape mismatch");
  }
  const int N = dy.dim(0), O = dy.dim(1), H = dy.dim(2), W = dy.dim(3), C = weight.dim(1);
  ensure_shape(dx, {N, C, H, W});
  const double* wd = weight.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      double* g = dx.plane(n, c);
      for (int o = 0; o < O; ++o) {
        const double* d = dy.plane(n, o);
        const double* k = wd + (static_cast<std::size_t>(o) * C + c) * 9;
        for (int i = 0; i < 3; ++i) {
          const int dh = i - 1;
          for (int j = 0; j < 3; ++j) {
            const int dw = j - 1;
            const double wv = k[i * 3 + j];
            const int w0 = lo(dw), w1 = hi(W, dw);
            for (int h = lo(dh); h < hi(H, dh); ++h) {
              double* grow = g + static_cast<std::ptrdiff_t>(h + dh) * W + dw;
              const double* drow = d + static_cast<std::ptrdiff_t>(h) * W;
#pragma omp simd
              for (int w = w0; w < w1; ++w) grow[w] += wv * drow[w];
            }
          }
        }
      }
    }
  }
}

void conv3x3_backward_params(const Tensor& x, const Tensor& dy, Tensor& dweight, Tensor& dbias) {
  if (x.rank() != 4 || dy.rank() != 4 || x.dim(0) != dy.dim(0) || x.dim(2) != dy.dim(2) || x.dim(3) != dy.dim(3)) {
    throw InvalidInput("conv3x3_backward_params: shape mismatch");
  }
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = dy.dim(1);
  if (dweight.shape() != std::vector<int>{O, C, 3, 3} || dbias.shape() != std::vector<int>{O}) {
    throw InvalidInput("conv3x3_backward_params: gradient buffer shape mismatch");
  }
  double* gw = dweight.data();

  // Per-column partial sums, reduced once per tap: a horizontal reduction
  // per row would dominate at the small spatial sizes of deep blocks.
#pragma omp parallel
  {
    std::vector<double> cols(static_cast<std::size_t>(W));
#pragma omp for collapse(2) schedule(static)
    for (int o = 0; o < O; ++o) {
      for (int c = 0; c < C; ++c) {
        double* k = gw + (static_cast<std::size_t>(o) * C + c) * 9;
        for (int i = 0; i < 3; ++i) {
          const int dh = i - 1;
          for (int j = 0; j < 3; ++j) {
            const int dw = j - 1;
            const int w0 = lo(dw), w1 = hi(W, dw);
            double* acc = cols.data();
            std::fill(cols.begin(), cols.end(), 0.0);
            for (int n = 0; n < N; ++n) {
              const double* d = dy.plane(n, o);
              const double* in = x.plane(n, c);
              for (int h = lo(dh); h < hi(H, dh); ++h) {
                const double* drow = d + static_cast<std::ptrdiff_t>(h) * W;
                const double* irow = in + static_cast<std::ptrdiff_t>(h + dh) * W + dw;
#pragma omp simd
                for (int w = w0; w < w1; ++w) acc[w] += drow[w] * irow[w];
              }
            }
            double total = 0.0;
            for (int w = w0; w < w1; ++w) total += acc[w];
            k[i * 3 + j] += total;
          }
        }
      }
    }
  }

#pragma omp parallel for schedule(static)
  for (int o = 0; o < O; ++o) {
    double acc = 0.0;
    for (int n = 0; n < N; ++n) {
      const double* d = dy.plane(n, o);
#pragma omp simd reduction(+ : acc)
      for (int i = 0; i < H * W; ++i) acc += d[i];
    }
    dbias[static_cast<std::size_t>(o)] += acc;
  }
}

void maxpool2_forward(const Tensor& x, Tensor& y, std::vector<int>& argmax) {
  if (x.rank() != 4) throw InvalidInput("maxpool2: input must be rank 4");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = H / 2, Wo = W / 2;
  if (Ho < 1 || Wo < 1) throw InvalidInput("maxpool2: spatial size too small " + x.shape_string());
  ensure_shape(y, {N, C, Ho, Wo});
  argmax.assign(y.size(), 0);

#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const double* in = x.plane(n, c);
      double* out = y.plane(n, c);
      const std::size_t in_base = (static_cast<std::size_t>(n) * C + c) * H * W;
      const std::size_t out_base = (static_cast<std::size_t>(n) * C + c) * Ho * Wo;
      for (int h = 0; h < Ho; ++h) {
        for (int w = 0; w < Wo; ++w) {
          int best = (2 * h) * W + 2 * w;
          const int cand[3] = {best + 1, best + W, best + W + 1};
          for (int k : cand) {
            if (in[k] > in[best]) best = k;
          }
          out[h * Wo + w] = in[best];
          argmax[out_base + static_cast<std::size_t>(h) * Wo + w] = static_cast<int>(in_base) + best;
        }
      }
    }
  }
}

void maxpool2_backward(const Tensor& dy, const std::vector<int>& argmax, const std::vector<int>& input_shape,
                       Tensor& dx) {
  if (argmax.size() != dy.size()) throw InvalidInput("maxpool2_backward: argmax size mismatch");
  ensure_shape(dx, input_shape);
  const int N = dy.dim(0), C = dy.dim(1);
  const std::size_t plane = static_cast<std::size_t>(dy.dim(2)) * dy.dim(3);
  double* g = dx.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t i = base; i < base + plane; ++i) g[argmax[i]] += dy[i];
    }
  }
}

void relu_forward(Tensor& x) {
  double* p = x.data();
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
#pragma omp parallel for simd schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) p[i] = p[i] > 0.0 ? p[i] : 0.0;
}

void relu_backward(const Tensor& output, Tensor& dy) {
  if (!output.same_shape(dy)) throw InvalidInput("relu_backward: shape mismatch");
  const double* o = output.data();
  double* g = dy.data();
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(dy.size());
#pragma omp parallel for simd schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) g[i] = o[i] > 0.0 ? g[i] : 0.0;
}

void linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, Tensor& y) {
  if (x.rank() != 2 || weight.rank() != 2 || weight.dim(1) != x.dim(1) || bias.size() != static_cast<std::size_t>(weight.dim(0))) {
    throw InvalidInput("linear: input " + x.shape_string() + " incompatible with weight " + weight.shape_string());
  }
  const int N = x.dim(0), I = x.dim(1), O = weight.dim(0);
  ensure_shape(y, {N, O});

#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    const double* xr = x.data() + static_cast<std::ptrdiff_t>(n) * I;
    for (int o = 0; o < O; ++o) {
      const double* wr = weight.data() + static_cast<std::ptrdiff_t>(o) * I;
      double acc = 0.0;
#pragma omp simd reduction(+ : acc)
      for (int i = 0; i < I; ++i) acc += wr[i] * xr[i];
      y.at(n, o) = acc + bias[static_cast<std::size_t>(o)];
    }
  }
}

void linear_backward_input(const Tensor& dy, const Tensor& weight, Tensor& dx) {
  if (dy.rank() != 2 || weight.rank() != 2 || dy.dim(1) != weight.dim(0)) {
    throw InvalidInput("linear_backward_input: shape mismatch");
  }
  const int N = dy.dim(0), O = weight.dim(0), I = weight.dim(1);
  ensure_shape(dx, {N, I});

#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    double* g = dx.data() + static_cast<std::ptrdiff_t>(n) * I;
    for (int o = 0; o < O; ++o) {
      const double d = dy.at(n, o);
      const double* wr = weight.data() + static_cast<std::ptrdiff_t>(o) * I;
#pragma omp simd
      for (int i = 0; i < I; ++i) g[i] += d * wr[i];
    }
  }
}

void linear_backward_params(const Tensor& x, const Tensor& dy, Tensor& dweight, Tensor& dbias) {
  if (x.rank() != 2 || dy.rank() != 2 || x.dim(0) != dy.dim(0)) {
    throw InvalidInput("linear_backward_params: shape mismatch");
  }
  const int N = x.dim(0), I = x.dim(1), O = dy.dim(1);
  if (dweight.shape() != std::vector<int>{O, I} || dbias.size() != static_cast<std::size_t>(O)) {
    throw InvalidInput("linear_backward_params: gradient buffer shape mismatch");
  }

#pragma omp parallel for schedule(static)
  for (int o = 0; o < O; ++o) {
    double* g = dweight.data() + static_cast<std::ptrdiff_t>(o) * I;
    double bacc = 0.0;
    for (int n = 0; n < N; ++n) {
      const double d = dy.at(n, o);
      const double* xr = x.data() + static_cast<std::ptrdiff_t>(n) * I;
#pragma omp simd
      for (int i = 0; i < I; ++i) g[i] += d * xr[i];
      bacc += d;
    }
    dbias[static_cast<std::size_t>(o)] += bacc;
  }
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw InvalidInput("softmax_rows: expected [N, K]");
  Tensor p(logits.shape());
  const int N = logits.dim(0), K = logits.dim(1);
  for (int n = 0; n < N; ++n) {
    double m = logits.at(n, 0);
    for (int k = 1; k < K; ++k) m = std::max(m, logits.at(n, k));
    double z = 0.0;
    for (int k = 0; k < K; ++k) {
      p.at(n, k) = std::exp(logits.at(n, k) - m);
      z += p.at(n, k);
    }
    for (int k = 0; k < K; ++k) p.at(n, k) /= z;
  }
  return p;
}

}  // namespace cuti::kernels
