// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>

#include "cuti/tensor.hpp"

namespace cuti {

enum class LossVariant { Alternating, L1, L2, L3 };
enum class Phase { Cuti, Target };

std::string to_string(LossVariant v);
LossVariant loss_variant_from_string(const std::string& s);
std::string to_string(Phase p);

/// Probabilities below this are raised to it before taking logs.
inline constexpr double kProbabilityFloor = 1e-12;

struct LossConfig {
  LossVariant variant = LossVariant::Alternating;
  double epsilon_y = 0.05;  // label smoothing, in (0, 0.5)
  double clamp = 3.0;       // upper bound on each maximized KL term
  int phase_offset = 0;     // 1 flips which parity runs the CUTI phase

  void validate() const;
};

/// Even (epoch + offset) runs the CUTI phase, odd runs the target phase.
Phase phase_for_epoch(int epoch, int phase_offset);

/// Batch mean of KL(q_y || p), q_y the smoothed one-hot label distribution
/// (1 - eps on the label, eps / (K - 1) elsewhere).
double kl_to_label(const Tensor& probs, std::span<const int> labels, double epsilon_y,
                   double floor = kProbabilityFloor);

/// d kl_to_label / d logits = (p - q_y) / N, where probs = softmax(logits).
Tensor kl_to_label_grad_logits(const Tensor& probs, std::span<const int> labels, double epsilon_y);

/// kl(p_s, y_s) - min(kl(p_x, y_x), clamp).
double cuti_loss(const Tensor& p_s, std::span<const int> y_s, const Tensor& p_x, std::span<const int> y_x,
                 const LossConfig& config);

/// L1 = s - clamp(t), L2 = s - clamp(i), L3 = s - clamp(t) - clamp(i).
/// Alternating is not an ablation variant and is rejected here.
double ablation_loss(const Tensor& p_s, std::span<const int> y_s, const Tensor& p_i, std::span<const int> y_i,
                     const Tensor& p_t, std::span<const int> y_t, LossVariant variant, const LossConfig& config);

/// Loss value plus its gradient w.r.t. the logits of each stream involved.
/// Empty tensors mark streams that do not contribute.
struct LossGradient {
  double value = 0.0;
  double source_term = 0.0;
  double offdomain_term = 0.0;  // sum of clamped maximized terms
  Tensor d_source;
  Tensor d_cuti;
  Tensor d_target;
};

/// Source-only supervised objective.
LossGradient supervised_loss_grad(const Tensor& p_s, std::span<const int> y_s, double epsilon_y);

/// Any combination of maximized terms. Pass an empty tensor to omit a stream.
/// A clamped term (value >= clamp) contributes no gradient.
LossGradient adversarial_loss_grad(const Tensor& p_s, std::span<const int> y_s, const Tensor& p_i,
                                   std::span<const int> y_i, const Tensor& p_t, std::span<const int> y_t,
                                   const LossConfig& config);

}  // namespace cuti
