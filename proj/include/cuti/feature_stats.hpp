// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "cuti/tensor.hpp"

namespace cuti {

/// Added to the population variance before the square root so constant
/// channels still normalize to finite values.
inline constexpr double kStatEpsilon = 1e-5;

/// Per-sample, per-channel style statistics of a [N, C, H, W] feature map.
struct StyleStats {
  Tensor mean;  // [N, C]
  Tensor dev;   // [N, C], sqrt(population variance + kStatEpsilon)

  int batch() const { return mean.dim(0); }
  int channels() const { return mean.dim(1); }
};

/// Instance statistics: spatial reduction only.
StyleStats compute_style_stats(const Tensor& f);

/// (f - mean) / dev channel-wise, the style-free content of f.
Tensor normalize_semantic(const Tensor& f);

/// AdaIN restyle: normalize_semantic(content) * (dev + eta_dev) + (mean + eta_mean).
///
/// eta_* ~ Normal(0, noise_scale^2) drawn per (n, c) from a generator seeded
/// with rng_seed; the noised deviation is clamped at zero.
Tensor restyle(const Tensor& content, const StyleStats& style, double noise_scale, std::uint64_t rng_seed);

/// Gradient of a scalar with respect to f, given its gradients with respect
/// to the statistics of f.
Tensor style_stats_backward(const Tensor& f, const StyleStats& stats, const Tensor& d_mean, const Tensor& d_dev);

namespace reference {
StyleStats compute_style_stats(const Tensor& f);
}

}  // namespace cuti
