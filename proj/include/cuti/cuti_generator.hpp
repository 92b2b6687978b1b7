// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "cuti/tensor.hpp"

namespace cuti {

/// Learnable channel mixing applied to the source style statistics at one
/// insertion point. A 1x1 convolution on per-channel scalars is a C x C
/// linear map with bias.
struct GeneratorParams {
  Tensor w_sigma;  // [C, C]
  Tensor b_sigma;  // [C]
  Tensor w_mu;     // [C, C]
  Tensor b_mu;     // [C]

  int channels() const { return w_sigma.empty() ? 0 : w_sigma.dim(0); }
  /// Zero tensors with the same shapes, used as gradient accumulators.
  GeneratorParams zeros_like() const;
  void validate() const;
};

/// w_sigma = I + N(0, perturbation^2), w_mu = N(0, perturbation^2), zero biases.
GeneratorParams init_generator(int channels, std::uint64_t rng_seed, double perturbation = 0.01);

/// Fuses the style of f_s into f_i, sample by sample:
///   out[n,c,:,:] = f_i[n,c,:,:] * (w_sigma dev_s[n] + b_sigma)[c] + (w_mu mean_s[n] + b_mu)[c]
Tensor cuti_fuse(const Tensor& f_i, const Tensor& f_s, const GeneratorParams& params);

struct FuseGradients {
  Tensor d_content;       // w.r.t. f_i
  Tensor d_style_source;  // w.r.t. f_s
  GeneratorParams d_params;
};

FuseGradients cuti_fuse_backward(const Tensor& f_i, const Tensor& f_s, const GeneratorParams& params,
                                 const Tensor& d_out);

}  // namespace cuti
