// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#include "cuti/feature_stats.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cuti/error.hpp"

namespace cuti {

StyleStats compute_style_stats(const Tensor& f) {
  require_feature_map(f, "compute_style_stats");
  const int N = f.dim(0), C = f.dim(1);
  const int hw = f.dim(2) * f.dim(3);
  StyleStats s{Tensor({N, C}), Tensor({N, C})};

#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const double* p = f.plane(n, c);
      double sum = 0.0;
#pragma omp simd reduction(+ : sum)
      for (int i = 0; i < hw; ++i) sum += p[i];
      const double mean = sum / hw;
      // Two-pass variance; the one-pass form loses precision on offset data.
      double sq = 0.0;
#pragma omp simd reduction(+ : sq)
      for (int i = 0; i < hw; ++i) sq += (p[i] - mean) * (p[i] - mean);
      s.mean.at(n, c) = mean;
      s.dev.at(n, c) = std::sqrt(sq / hw + kStatEpsilon);
    }
  }
  return s;
}

Tensor normalize_semantic(const Tensor& f) {
  const StyleStats s = compute_style_stats(f);
  Tensor out(f.shape());
  const int N = f.dim(0), C = f.dim(1), hw = f.dim(2) * f.dim(3);

#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const double m = s.mean.at(n, c), inv = 1.0 / s.dev.at(n, c);
      const double* p = f.plane(n, c);
      double* q = out.plane(n, c);
      for (int i = 0; i < hw; ++i) q[i] = (p[i] - m) * inv;
    }
  }
  return out;
}

Tensor restyle(const Tensor& content, const StyleStats& style, double noise_scale, std::uint64_t rng_seed) {
  require_feature_map(content, "restyle");
  const int N = content.dim(0), C = content.dim(1), hw = content.dim(2) * content.dim(3);
  if (style.mean.shape() != std::vector<int>{N, C} || style.dev.shape() != std::vector<int>{N, C}) {
    throw InvalidInput("restyle: style statistics shape does not match content (N, C)");
  }
  if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) throw InvalidInput("restyle: noise_scale must be >= 0");

  // Noise is drawn serially so the stream is independent of thread count.
  Tensor mean = style.mean;
  Tensor dev = style.dev;
  if (noise_scale > 0.0) {
    std::mt19937_64 rng(rng_seed);
    std::normal_distribution<double> normal(0.0, noise_scale);
    for (std::size_t i = 0; i < mean.size(); ++i) {
      dev[i] = std::max(0.0, dev[i] + normal(rng));
      mean[i] += normal(rng);
    }
  }

  const Tensor z = normalize_semantic(content);
  Tensor out(content.shape());
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const double a = dev.at(n, c), b = mean.at(n, c);
      const double* p = z.plane(n, c);
      double* q = out.plane(n, c);
      for (int i = 0; i < hw; ++i) q[i] = p[i] * a + b;
    }
  }
  return out;
}

Tensor style_stats_backward(const Tensor& f, const StyleStats& stats, const Tensor& d_mean, const Tensor& d_dev) {
  const int N = f.dim(0), C = f.dim(1), hw = f.dim(2) * f.dim(3);
  if (d_mean.shape() != std::vector<int>{N, C} || d_dev.shape() != std::vector<int>{N, C}) {
    throw InvalidInput("style_stats_backward: gradient shape mismatch");
  }
  Tensor df(f.shape());
  // d mean / d f_j = 1/hw;  d dev / d f_j = (f_j - mean) / (hw * dev)
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const double m = stats.mean.at(n, c);
      const double gm = d_mean.at(n, c) / hw;
      const double gd = d_dev.at(n, c) / (hw * stats.dev.at(n, c));
      const double* p = f.plane(n, c);
      double* q = df.plane(n, c);
      for (int i = 0; i < hw; ++i) q[i] = gm + gd * (p[i] - m);
    }
  }
  return df;
}

namespace reference {

StyleStats compute_style_stats(const Tensor& f) {
  require_feature_map(f, "reference::compute_style_stats");
  const int N = f.dim(0), C = f.dim(1), H = f.dim(2), W = f.dim(3);
  StyleStats s{Tensor({N, C}), Tensor({N, C})};
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      double sum = 0.0;
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) sum += f.at(n, c, h, w);
      const double mean = sum / (H * W);
      double sq = 0.0;
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) sq += (f.at(n, c, h, w) - mean) * (f.at(n, c, h, w) - mean);
      s.mean.at(n, c) = mean;
      s.dev.at(n, c) = std::sqrt(sq / (H * W) + kStatEpsilon);
    }
  return s;
}

}  // namespace reference
}  // namespace cuti
