// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#include "cuti/cuti_generator.hpp"

#include <random>

#include "cuti/error.hpp"
#include "cuti/feature_stats.hpp"

namespace cuti {

namespace {

// y[n, :] = W x[n, :] + b for [N, C] statistics.
Tensor mix(const Tensor& w, const Tensor& b, const Tensor& x) {
  const int N = x.dim(0), C = x.dim(1);
  Tensor y({N, C});
  for (int n = 0; n < N; ++n)
    for (int r = 0; r < C; ++r) {
      double acc = b[static_cast<std::size_t>(r)];
      for (int k = 0; k < C; ++k) acc += w.at(r, k) * x.at(n, k);
      y.at(n, r) = acc;
    }
  return y;
}

}  // namespace

GeneratorParams GeneratorParams::zeros_like() const {
  return {Tensor(w_sigma.shape()), Tensor(b_sigma.shape()), Tensor(w_mu.shape()), Tensor(b_mu.shape())};
}

void GeneratorParams::validate() const {
  const int C = channels();
  if (C < 1) throw InvalidInput("generator: empty parameters");
  const std::vector<int> sq{C, C}, vec{C};
  if (w_sigma.shape() != sq || w_mu.shape() != sq || b_sigma.shape() != vec || b_mu.shape() != vec) {
    throw InvalidInput("generator: parameter shapes must be [C, C] and [C]");
  }
  if (!w_sigma.all_finite() || !w_mu.all_finite() || !b_sigma.all_finite() || !b_mu.all_finite()) {
    throw InvalidInput("generator: non-finite parameters");
  }
}

GeneratorParams init_generator(int channels, std::uint64_t rng_seed, double perturbation) {
  if (channels < 1) throw InvalidInput("init_generator: channels must be >= 1");
  GeneratorParams p{Tensor({channels, channels}), Tensor({channels}), Tensor({channels, channels}),
                    Tensor({channels})};
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int r = 0; r < channels; ++r)
    for (int c = 0; c < channels; ++c) {
      p.w_sigma.at(r, c) = (r == c ? 1.0 : 0.0) + perturbation * normal(rng);
      p.w_mu.at(r, c) = perturbation * normal(rng);
    }
  return p;
}

Tensor cuti_fuse(const Tensor& f_i, const Tensor& f_s, const GeneratorParams& params) {
  require_feature_map(f_i, "cuti_fuse content");
  if (!f_i.same_shape(f_s)) {
    throw InvalidInput("cuti_fuse: f_i " + f_i.shape_string() + " and f_s " + f_s.shape_string() + " differ");
  }
  params.validate();
  if (params.channels() != f_i.dim(1)) throw InvalidInput("cuti_fuse: generator channel count mismatch");

  const StyleStats s = compute_style_stats(f_s);
  const Tensor scale = mix(params.w_sigma, params.b_sigma, s.dev);
  const Tensor shift = mix(params.w_mu, params.b_mu, s.mean);

  const int N = f_i.dim(0), C = f_i.dim(1), hw = f_i.dim(2) * f_i.dim(3);
  Tensor out(f_i.shape());
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const double a = scale.at(n, c), b = shift.at(n, c);
      const double* p = f_i.plane(n, c);
      double* q = out.plane(n, c);
      for (int i = 0; i < hw; ++i) q[i] = p[i] * a + b;
    }
  }
  return out;
}

FuseGradients cuti_fuse_backward(const Tensor& f_i, const Tensor& f_s, const GeneratorParams& params,
                                 const Tensor& d_out) {
  if (!f_i.same_shape(f_s) || !f_i.same_shape(d_out)) throw InvalidInput("cuti_fuse_backward: shape mismatch");
  const StyleStats s = compute_style_stats(f_s);
  const Tensor scale = mix(params.w_sigma, params.b_sigma, s.dev);

  const int N = f_i.dim(0), C = f_i.dim(1), hw = f_i.dim(2) * f_i.dim(3);
  FuseGradients g{Tensor(f_i.shape()), Tensor(), params.zeros_like()};
  Tensor d_scale({N, C}), d_shift({N, C});

#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const double a = scale.at(n, c);
      const double* p = f_i.plane(n, c);
      const double* d = d_out.plane(n, c);
      double* q = g.d_content.plane(n, c);
      double ds = 0.0, dt = 0.0;
      for (int i = 0; i < hw; ++i) {
        q[i] = d[i] * a;
        ds += d[i] * p[i];
        dt += d[i];
      }
      d_scale.at(n, c) = ds;
      d_shift.at(n, c) = dt;
    }
  }

  Tensor d_dev({N, C}), d_mean({N, C});
  for (int n = 0; n < N; ++n) {
    for (int r = 0; r < C; ++r) {
      const double gs = d_scale.at(n, r), gt = d_shift.at(n, r);
      g.d_params.b_sigma[static_cast<std::size_t>(r)] += gs;
      g.d_params.b_mu[static_cast<std::size_t>(r)] += gt;
      for (int k = 0; k < C; ++k) {
        g.d_params.w_sigma.at(r, k) += gs * s.dev.at(n, k);
        g.d_params.w_mu.at(r, k) += gt * s.mean.at(n, k);
        d_dev.at(n, k) += params.w_sigma.at(r, k) * gs;
        d_mean.at(n, k) += params.w_mu.at(r, k) * gt;
      }
    }
  }
  g.d_style_source = style_stats_backward(f_s, s, d_mean, d_dev);
  return g;
}

}  // namespace cuti
