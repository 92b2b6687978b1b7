// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#include "cuti/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "cuti/error.hpp"

namespace cuti {

namespace {

void check_probs_labels(const Tensor& probs, std::span<const int> labels) {
  if (probs.rank() != 2 || probs.dim(0) < 1 || probs.dim(1) < 2) {
    throw InvalidInput("loss: probabilities must be [N >= 1, K >= 2], got " + probs.shape_string());
  }
  if (static_cast<int>(labels.size()) != probs.dim(0)) throw InvalidInput("loss: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= probs.dim(1)) throw InvalidInput("loss: label out of range");
}

double smoothed(int k, int label, int K, double eps) { return k == label ? 1.0 - eps : eps / (K - 1); }

}  // namespace

std::string to_string(LossVariant v) {
  switch (v) {
    case LossVariant::Alternating: return "alternating";
    case LossVariant::L1: return "L1";
    case LossVariant::L2: return "L2";
    case LossVariant::L3: return "L3";
  }
  return "?";
}

LossVariant loss_variant_from_string(const std::string& s) {
  if (s == "alternating") return LossVariant::Alternating;
  if (s == "L1") return LossVariant::L1;
  if (s == "L2") return LossVariant::L2;
  if (s == "L3") return LossVariant::L3;
  throw InvalidInput("unknown loss variant '" + s + "'");
}

std::string to_string(Phase p) { return p == Phase::Cuti ? "cuti" : "target"; }

void LossConfig::validate() const {
  if (!(epsilon_y > 0.0 && epsilon_y < 0.5)) throw InvalidInput("loss.epsilon_y must lie in (0, 0.5)");
  if (!(clamp > 0.0) || !std::isfinite(clamp)) throw InvalidInput("loss.clamp must be finite and > 0");
  if (phase_offset != 0 && phase_offset != 1) throw InvalidInput("loss.phase_offset must be 0 or 1");
}

Phase phase_for_epoch(int epoch, int phase_offset) {
  return ((epoch + phase_offset) % 2 == 0) ? Phase::Cuti : Phase::Target;
}

double kl_to_label(const Tensor& probs, std::span<const int> labels, double epsilon_y, double floor) {
  check_probs_labels(probs, labels);
  const int N = probs.dim(0), K = probs.dim(1);
  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    double kl = 0.0;
    for (int k = 0; k < K; ++k) {
      const double q = smoothed(k, labels[static_cast<std::size_t>(n)], K, epsilon_y);
      if (q <= 0.0) continue;
      const double p = std::max(probs.at(n, k), floor);
      kl += q * (std::log(q) - std::log(p));
    }
    total += kl;
  }
  // Rounding can push a perfect fit slightly negative; NaN must pass through.
  const double mean = total / N;
  return mean < 0.0 ? 0.0 : mean;
}

Tensor kl_to_label_grad_logits(const Tensor& probs, std::span<const int> labels, double epsilon_y) {
  check_probs_labels(probs, labels);
  const int N = probs.dim(0), K = probs.dim(1);
  Tensor g(probs.shape());
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < K; ++k)
      g.at(n, k) = (probs.at(n, k) - smoothed(k, labels[static_cast<std::size_t>(n)], K, epsilon_y)) / N;
  return g;
}

double cuti_loss(const Tensor& p_s, std::span<const int> y_s, const Tensor& p_x, std::span<const int> y_x,
                 const LossConfig& config) {
  config.validate();
  return kl_to_label(p_s, y_s, config.epsilon_y) - std::min(kl_to_label(p_x, y_x, config.epsilon_y), config.clamp);
}

double ablation_loss(const Tensor& p_s, std::span<const int> y_s, const Tensor& p_i, std::span<const int> y_i,
                     const Tensor& p_t, std::span<const int> y_t, LossVariant variant, const LossConfig& config) {
  config.validate();
  const double s = kl_to_label(p_s, y_s, config.epsilon_y);
  auto clamped = [&](const Tensor& p, std::span<const int> y) {
    return std::min(kl_to_label(p, y, config.epsilon_y), config.clamp);
  };
  switch (variant) {
    case LossVariant::L1: return s - clamped(p_t, y_t);
    case LossVariant::L2: return s - clamped(p_i, y_i);
    case LossVariant::L3: return s - clamped(p_t, y_t) - clamped(p_i, y_i);
    case LossVariant::Alternating: break;
  }
  throw InvalidInput("ablation_loss: the alternating loss is selected per epoch; use cuti_loss");
}

LossGradient supervised_loss_grad(const Tensor& p_s, std::span<const int> y_s, double epsilon_y) {
  LossGradient g;
  g.source_term = kl_to_label(p_s, y_s, epsilon_y);
  g.value = g.source_term;
  g.d_source = kl_to_label_grad_logits(p_s, y_s, epsilon_y);
  return g;
}

LossGradient adversarial_loss_grad(const Tensor& p_s, std::span<const int> y_s, const Tensor& p_i,
                                   std::span<const int> y_i, const Tensor& p_t, std::span<const int> y_t,
                                   const LossConfig& config) {
  config.validate();
  LossGradient g = supervised_loss_grad(p_s, y_s, config.epsilon_y);
  auto maximized = [&](const Tensor& p, std::span<const int> y, Tensor& d) {
    if (p.empty()) return;
    const double kl = kl_to_label(p, y, config.epsilon_y);
    g.offdomain_term += std::min(kl, config.clamp);
    if (kl < config.clamp) {
      d = kl_to_label_grad_logits(p, y, config.epsilon_y);
      for (double& v : d.values()) v = -v;
    } else {
      d = Tensor(p.shape());
    }
  };
  maximized(p_i, y_i, g.d_cuti);
  maximized(p_t, y_t, g.d_target);
  g.value = g.source_term - g.offdomain_term;
  return g;
}

}  // namespace cuti
