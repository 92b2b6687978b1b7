// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cuti/backbone.hpp"
#include "cuti/data.hpp"
#include "cuti/evaluation.hpp"
#include "cuti/training.hpp"

namespace cuti {

enum class Corner { TopLeft, TopRight, BottomLeft, BottomRight };

std::string to_string(Corner c);
Corner corner_from_string(const std::string& s);

/// Square watermark stamped over the same pixels of every image.
struct PatchSpec {
  int size = 8;
  Corner corner = Corner::BottomRight;
  int offset_x = 0;  // inward from the anchoring corner
  int offset_y = 0;
  std::string fill = "solid";  // or "texture": per-pixel values drawn once from `seed`
  double value = 1.0;          // solid fill
  std::uint64_t seed = 0;

  void validate() const;
};

/// Replaces the patch pixels; everything else is copied bit for bit.
Tensor apply_patch(const Tensor& images, const PatchSpec& patch);
LabeledBatch apply_patch(const LabeledBatch& batch, const PatchSpec& patch);

enum class AttackKind { FTAL, RTAL, EWC, AU, Overwrite };

std::string to_string(AttackKind k);
/// Accepts ftal, rtal, ewc, au, overwrite (any case).
AttackKind attack_kind_from_string(const std::string& s);

struct AttackSpec {
  AttackKind kind = AttackKind::FTAL;
  int epochs = 10;
  double learning_rate = 1e-4;
  double data_fraction = 0.2;  // of the authorized training split
  std::string optimizer = "adam";
  int batch_size = 32;
  std::uint64_t seed = 0;

  double ewc_lambda = 10.0;
  int fisher_samples = 128;

  PatchSpec attacker_patch{8, Corner::TopLeft, 0, 0, "texture", 1.0, 1234};
  int attacker_label = 0;
  double attacker_poison_fraction = 0.5;  // share of the attacker's set carrying the attacker patch

  void validate() const;
};

struct AttackResult {
  ModelState state;
  EvalReport report;
  double clean_acc = 0.0;
  double patched_acc = 0.0;
};

/// Runs one removal attack and re-evaluates on `source.test` with and without
/// the owner's patch. `aux` feeds AU; when null the synthetic unauthorized
/// pool of the attacker's subset is used with its labels discarded.
AttackResult run_attack(const ModelState& state, const AttackSpec& attack, const DomainDataset& source,
                        const PatchSpec& owner_patch, const LabeledBatch* aux = nullptr,
                        const SynthConfig& synth = {});

/// Diagonal Fisher information: mean squared per-sample gradient of the label
/// loss over the first `samples` items of `data`. Generators are excluded.
std::vector<Tensor> diagonal_fisher(const ModelState& state, const LabeledBatch& data, int samples,
                                    double epsilon_y = 0.05);

struct OwnershipResult {
  ModelState model;
  ModelState sl_model;  // empty unless the control was trained
  EvalReport report;
  TrainResult training;
};

/// Target-specified training with the patched source as the unauthorized
/// domain. Cells: cuti (and optionally sl) on the clean and patched source test split.
OwnershipResult run_ownership_verification(const DomainDataset& source, const BackboneSpec& spec,
                                           const TrainConfig& config, const PatchSpec& patch,
                                           bool with_sl_control = true, const EpochCallback& on_epoch = {});

struct AuthorizationResult {
  ModelState model;
  EvalReport report;
  TrainResult training;
};

/// Authorized domain = patched source. Each epoch the unauthorized pool is
/// {source} + {synthetic} + {patched synthetic}. The grid covers every domain
/// in `domains` with and without the patch.
AuthorizationResult run_applicability_authorization(const std::vector<DomainDataset>& domains, int source_index,
                                                    const BackboneSpec& spec, const TrainConfig& config,
                                                    const PatchSpec& auth_patch, const EpochCallback& on_epoch = {});

}  // namespace cuti
