// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cuti/cuti_generator.hpp"
#include "cuti/tensor.hpp"
#include "json.hpp"

namespace cuti {

/// One feature block: a stack of 3x3 conv + ReLU layers followed by a 2x2 max-pool.
struct BlockSpec {
  std::vector<int> conv_channels;
};

/// Classifier architecture. A CUTI generator sits after the pool of every block.
struct BackboneSpec {
  int in_channels = 3;
  int in_height = 32;
  int in_width = 32;
  std::vector<BlockSpec> blocks;
  int head_hidden = 128;  // 0 selects a single linear layer
  int num_classes = 10;

  int block_count() const { return static_cast<int>(blocks.size()); }
  /// (C, H, W) after block l, including its pool.
  std::array<int, 3> block_output_shape(int l) const;
  int flat_features() const;
  void validate() const;

  /// Three blocks of two convs (16/32/64 channels) and a 128-unit hidden head.
  static BackboneSpec desk_default(int in_channels, int image_size, int num_classes);
};

nlohmann::json to_json(const BackboneSpec& spec);
BackboneSpec backbone_spec_from_json(const nlohmann::json& j);

struct ConvParams {
  Tensor weight;  // [out, in, 3, 3]
  Tensor bias;    // [out]
};

struct LinearParams {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]
};

struct BackboneParams {
  std::vector<std::vector<ConvParams>> blocks;
  std::vector<LinearParams> classifier;

  BackboneParams zeros_like() const;
};

struct TrainingMeta {
  int epoch = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// Everything a checkpoint holds: architecture, backbone parameters, the
/// per-block generators (training only) and bookkeeping.
struct ModelState {
  BackboneSpec spec;
  BackboneParams backbone;
  std::vector<GeneratorParams> generators;
  TrainingMeta meta;

  bool has_generators() const { return !generators.empty(); }
  void validate() const;
};

ModelState init_model(const BackboneSpec& spec, std::uint64_t seed, bool with_generators = true);

/// Fresh random classifier head; feature blocks untouched.
void reinit_classifier(ModelState& state, std::uint64_t seed);
/// Fresh random final (class-score) layer only.
void reinit_output_layer(ModelState& state, std::uint64_t seed);

/// Drops the generators. The source path never uses them, so predictions are unchanged.
ModelState export_released_model(const ModelState& state);

/// Rounds every parameter to float32, the checkpoint storage precision.
void round_to_storage_precision(ModelState& state);

using ParamVisitor = std::function<void(const std::string& name, Tensor& value)>;
using ConstParamVisitor = std::function<void(const std::string& name, const Tensor& value)>;

/// Canonical order: block.<l>.conv.<j>.{weight,bias}, classifier.<i>.{weight,bias},
/// generator.<l>.{w_sigma,b_sigma,w_mu,b_mu}.
void for_each_parameter(ModelState& state, const ParamVisitor& visit);
void for_each_parameter(const ModelState& state, const ConstParamVisitor& visit);

/// Gradient accumulators mirroring ModelState.
struct Gradients {
  BackboneParams backbone;
  std::vector<GeneratorParams> generators;
  /// False when the step never routed through the generators; optimizers then skip them.
  bool generators_active = false;

  static Gradients zeros_for(const ModelState& state);
  void for_each(const ConstParamVisitor& visit) const;
};

struct BlockTrace {
  Tensor input;
  std::vector<Tensor> conv_outputs;  // post-ReLU
  std::vector<int> pool_argmax;
  Tensor pooled;
  Tensor style_source;  // source-stream block output used for fusion (fused streams only)
  Tensor fused;

  bool is_fused() const { return !fused.empty(); }
  const Tensor& output() const { return is_fused() ? fused : pooled; }
};

/// Cached activations of one stream for backpropagation.
struct StreamTrace {
  std::vector<BlockTrace> blocks;
  Tensor flat;
  Tensor hidden;
  Tensor logits;
  Tensor probs;
};

StreamTrace trace_forward(const ModelState& state, const Tensor& images);

/// CUTI stream: after every block the activations are fused with the style of
/// the matching source-stream block output.
StreamTrace trace_forward_fused(const ModelState& state, const Tensor& images, const StreamTrace& source);

struct StreamBackward {
  Tensor d_input;
  /// For fused streams: gradient w.r.t. each source-stream block output.
  std::vector<Tensor> d_source_blocks;
};

/// Accumulates parameter gradients of a scalar whose gradient w.r.t. this
/// stream's logits is d_logits. extra_block_grads, when given, are added to
/// the gradient of each block output (used to route fused-stream gradients
/// into the source stream).
StreamBackward backward(const ModelState& state, const StreamTrace& trace, const Tensor& d_logits, Gradients& grads,
                        const std::vector<Tensor>* extra_block_grads = nullptr);

Tensor forward_logits(const ModelState& state, const Tensor& images);
/// Class probabilities [N, num_classes].
Tensor forward(const ModelState& state, const Tensor& images);

/// Source and CUTI streams in parallel. With bypass_generators the CUTI
/// stream is a plain forward pass.
std::pair<Tensor, Tensor> forward_paired_cuti(const ModelState& state, const Tensor& x_s, const Tensor& x_i,
                                              bool bypass_generators = false);

}  // namespace cuti
