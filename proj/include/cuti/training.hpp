// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cuti/backbone.hpp"
#include "cuti/data.hpp"
#include "cuti/objectives.hpp"
#include "cuti/optimizer.hpp"
#include "json.hpp"

namespace cuti {

enum class TrainMode { SL, TargetSpecified, TargetFree };

std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

/// How unauthorized samples are synthesized when no target data exists.
struct SynthConfig {
  double noisy_adain_fraction = 0.5;  // remainder comes from the pluggable synthesizer
  double noise_scale = 0.25;          // std-dev of the style noise, in pixel units
  std::string style_source = "random_other";  // or "self"
  double invert_prob = 0.3;
  double hue_jitter = 0.5;
  double contrast_jitter = 0.5;
  double brightness_jitter = 0.3;
  int max_shift = 2;

  void validate() const;
};

/// Pluggable source of non-AdaIN synthetic samples.
class UnauthorizedSynthesizer {
 public:
  virtual ~UnauthorizedSynthesizer() = default;
  /// One output per input image, same order and labels.
  virtual LabeledBatch synthesize(const LabeledBatch& content, const SynthConfig& config, std::uint64_t seed) const = 0;
};

/// Stacked random photometric and geometric perturbations: optional colour
/// inversion, random channel mixing, contrast and brightness changes, and a
/// small translation.
class AugmentationSynthesizer : public UnauthorizedSynthesizer {
 public:
  LabeledBatch synthesize(const LabeledBatch& content, const SynthConfig& config, std::uint64_t seed) const override;
};

/// Mixes pixel-space noisy-AdaIN restyles (noisy_adain_fraction of the batch,
/// each image taking the statistics of a donor) with synthesizer output.
/// Output i is derived from input i and keeps its label; tag = synthetic.
LabeledBatch synthesize_unauthorized(const LabeledBatch& source, const SynthConfig& config, std::uint64_t rng_seed,
                                     const UnauthorizedSynthesizer* synthesizer = nullptr);

struct TrainConfig {
  int max_epochs = 40;
  int batch_size = 32;
  OptimizerSpec optimizer;
  std::uint64_t seed = 0;
  LossConfig loss;
  TrainMode mode = TrainMode::SL;
  SynthConfig synth;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  std::string phase;  // "sl", "cuti", "target" or "cuti+target"
  double loss = 0.0;
  double source_acc = 0.0;     // running training accuracy, %
  double offdomain_acc = 0.0;  // on the maximized stream, %
  double wall_time_s = 0.0;
};

nlohmann::json to_json(const EpochRecord& r);

struct TrainResult {
  ModelState state;
  std::vector<EpochRecord> log;
  bool source_target_overlap = false;
  std::vector<std::string> notes;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Per-epoch off-domain pool: the CUTI-domain initialization and target set.
using PoolProvider = std::function<LabeledBatch(int epoch)>;

TrainResult train_sl(const LabeledBatch& source, const BackboneSpec& spec, const TrainConfig& config,
                     const EpochCallback& on_epoch = {});

/// CUTI training against a labeled unauthorized target. The CUTI pool is the
/// target set; fusion with source style happens online in feature space.
TrainResult train_target_specified(const LabeledBatch& source, const LabeledBatch& target, const BackboneSpec& spec,
                                   const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Same procedure with the target replaced by freshly synthesized samples every epoch.
TrainResult train_target_free(const LabeledBatch& source, const BackboneSpec& spec, const TrainConfig& config,
                              const EpochCallback& on_epoch = {}, const UnauthorizedSynthesizer* synthesizer = nullptr);

/// Shared CUTI loop over an arbitrary per-epoch pool.
TrainResult train_cuti(const LabeledBatch& source, const PoolProvider& pool, const BackboneSpec& spec,
                       const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Plain supervised fine-tuning of an existing model. Used by the removal attacks.
struct FitOptions {
  int epochs = 1;
  int batch_size = 32;
  OptimizerSpec optimizer;
  double epsilon_y = 0.05;
  std::uint64_t seed = 0;
  /// Runs after every optimizer step.
  std::function<void(ModelState&)> after_step;
};

void fit_supervised(ModelState& state, const LabeledBatch& data, const FitOptions& options);

}  // namespace cuti
