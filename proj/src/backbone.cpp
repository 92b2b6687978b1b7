// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#include "cuti/backbone.hpp"

#include <cmath>
#include <random>

#include "cuti/error.hpp"
#include "cuti/kernels.hpp"

namespace cuti {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void he_normal(Tensor& t, int fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
  for (double& v : t.values()) v = normal(rng);
}

std::vector<LinearParams> make_classifier(const BackboneSpec& spec, std::mt19937_64& rng) {
  std::vector<LinearParams> head;
  int in = spec.flat_features();
  std::vector<int> widths;
  if (spec.head_hidden > 0) widths.push_back(spec.head_hidden);
  widths.push_back(spec.num_classes);
  for (int out : widths) {
    LinearParams p{Tensor({out, in}), Tensor({out})};
    he_normal(p.weight, in, rng);
    head.push_back(std::move(p));
    in = out;
  }
  return head;
}

void check_input(const BackboneSpec& spec, const Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != spec.in_channels || images.dim(2) != spec.in_height ||
      images.dim(3) != spec.in_width) {
    throw InvalidInput("backbone: input " + images.shape_string() + " does not match [N, " +
                       std::to_string(spec.in_channels) + ", " + std::to_string(spec.in_height) + ", " +
                       std::to_string(spec.in_width) + "]");
  }
  if (images.dim(0) < 1) throw InvalidInput("backbone: empty batch");
}

void add_into(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

BlockTrace run_block(const ModelState& state, int l, const Tensor& input) {
  BlockTrace b;
  b.input = input;
  const Tensor* x = &b.input;
  for (const ConvParams& conv : state.backbone.blocks[static_cast<std::size_t>(l)]) {
    Tensor y;
    kernels::conv3x3_forward(*x, conv.weight, conv.bias, y);
    kernels::relu_forward(y);
    b.conv_outputs.push_back(std::move(y));
    x = &b.conv_outputs.back();
  }
  kernels::maxpool2_forward(*x, b.pooled, b.pool_argmax);
  return b;
}

void run_head(const ModelState& state, StreamTrace& t) {
  const Tensor& last = t.blocks.back().output();
  t.flat = last.reshaped({last.dim(0), static_cast<int>(last.size() / static_cast<std::size_t>(last.dim(0)))});
  const auto& head = state.backbone.classifier;
  if (head.size() == 2) {
    kernels::linear_forward(t.flat, head[0].weight, head[0].bias, t.hidden);
    kernels::relu_forward(t.hidden);
    kernels::linear_forward(t.hidden, head[1].weight, head[1].bias, t.logits);
  } else {
    kernels::linear_forward(t.flat, head[0].weight, head[0].bias, t.logits);
  }
  t.probs = kernels::softmax_rows(t.logits);
}

}  // namespace

std::array<int, 3> BackboneSpec::block_output_shape(int l) const {
  int h = in_height, w = in_width;
  for (int i = 0; i <= l; ++i) {
    h /= 2;
    w /= 2;
  }
  return {blocks.at(static_cast<std::size_t>(l)).conv_channels.back(), h, w};
}

int BackboneSpec::flat_features() const {
  const auto s = block_output_shape(block_count() - 1);
  return s[0] * s[1] * s[2];
}

void BackboneSpec::validate() const {
  if (in_channels < 1 || in_height < 1 || in_width < 1) throw InvalidInput("backbone: invalid input shape");
  if (blocks.empty()) throw InvalidInput("backbone: at least one block required");
  if (num_classes < 2) throw InvalidInput("backbone: num_classes must be >= 2");
  if (head_hidden < 0) throw InvalidInput("backbone: head_hidden must be >= 0");
  for (const BlockSpec& b : blocks) {
    if (b.conv_channels.empty()) throw InvalidInput("backbone: every block needs at least one conv");
    for (int c : b.conv_channels)
      if (c < 1) throw InvalidInput("backbone: conv channel counts must be >= 1");
  }
  const auto s = block_output_shape(block_count() - 1);
  if (s[1] < 1 || s[2] < 1) throw InvalidInput("backbone: input too small for " + std::to_string(block_count()) + " pools");
}

BackboneSpec BackboneSpec::desk_default(int in_channels, int image_size, int num_classes) {
  BackboneSpec s;
  s.in_channels = in_channels;
  s.in_height = s.in_width = image_size;
  s.blocks = {{{16, 16}}, {{32, 32}}, {{64, 64}}};
  s.head_hidden = 128;
  s.num_classes = num_classes;
  return s;
}

nlohmann::json to_json(const BackboneSpec& spec) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const BlockSpec& b : spec.blocks) blocks.push_back(b.conv_channels);
  return {{"input_shape", {spec.in_channels, spec.in_height, spec.in_width}},
          {"blocks", blocks},
          {"head_hidden", spec.head_hidden},
          {"num_classes", spec.num_classes}};
}

BackboneSpec backbone_spec_from_json(const nlohmann::json& j) {
  BackboneSpec s;
  const auto shape = j.at("input_shape").get<std::vector<int>>();
  if (shape.size() != 3) throw InvalidInput("backbone: input_shape must have 3 entries");
  s.in_channels = shape[0];
  s.in_height = shape[1];
  s.in_width = shape[2];
  for (const auto& b : j.at("blocks")) s.blocks.push_back({b.get<std::vector<int>>()});
  s.head_hidden = j.at("head_hidden").get<int>();
  s.num_classes = j.at("num_classes").get<int>();
  s.validate();
  return s;
}

BackboneParams BackboneParams::zeros_like() const {
  BackboneParams z;
  for (const auto& block : blocks) {
    auto& zb = z.blocks.emplace_back();
    for (const ConvParams& c : block) zb.push_back({Tensor(c.weight.shape()), Tensor(c.bias.shape())});
  }
  for (const LinearParams& p : classifier) z.classifier.push_back({Tensor(p.weight.shape()), Tensor(p.bias.shape())});
  return z;
}

void ModelState::validate() const {
  spec.validate();
  if (backbone.blocks.size() != spec.blocks.size()) throw InvalidInput("model: block count mismatch");
  if (!generators.empty()) {
    if (generators.size() != spec.blocks.size()) throw InvalidInput("model: need one generator per block");
    for (int l = 0; l < spec.block_count(); ++l) {
      generators[static_cast<std::size_t>(l)].validate();
      if (generators[static_cast<std::size_t>(l)].channels() != spec.block_output_shape(l)[0]) {
        throw InvalidInput("model: generator " + std::to_string(l) + " channel count mismatch");
      }
    }
  }
}

ModelState init_model(const BackboneSpec& spec, std::uint64_t seed, bool with_generators) {
  spec.validate();
  ModelState m;
  m.spec = spec;
  m.meta.seed = seed;
  std::mt19937_64 rng(mix_seed(seed, 0));
  int in = spec.in_channels;
  for (const BlockSpec& b : spec.blocks) {
    auto& block = m.backbone.blocks.emplace_back();
    for (int out : b.conv_channels) {
      ConvParams c{Tensor({out, in, 3, 3}), Tensor({out})};
      he_normal(c.weight, in * 9, rng);
      block.push_back(std::move(c));
      in = out;
    }
  }
  m.backbone.classifier = make_classifier(spec, rng);
  if (with_generators) {
    for (int l = 0; l < spec.block_count(); ++l) {
      m.generators.push_back(init_generator(spec.block_output_shape(l)[0], mix_seed(seed, 100 + static_cast<std::uint64_t>(l))));
    }
  }
  return m;
}

void reinit_classifier(ModelState& state, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 7));
  state.backbone.classifier = make_classifier(state.spec, rng);
}

void reinit_output_layer(ModelState& state, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 7));
  const std::vector<LinearParams> fresh = make_classifier(state.spec, rng);
  state.backbone.classifier.back() = fresh.back();
}

ModelState export_released_model(const ModelState& state) {
  ModelState out = state;
  out.generators.clear();
  return out;
}

void round_to_storage_precision(ModelState& state) {
  for_each_parameter(state, [](const std::string&, Tensor& t) {
    for (double& v : t.values()) v = static_cast<double>(static_cast<float>(v));
  });
}

namespace {

template <class State, class Visit>
void visit_params(State& state, Visit&& visit) {
  for (std::size_t l = 0; l < state.backbone.blocks.size(); ++l) {
    for (std::size_t j = 0; j < state.backbone.blocks[l].size(); ++j) {
      const std::string p = "block." + std::to_string(l) + ".conv." + std::to_string(j) + ".";
      visit(p + "weight", state.backbone.blocks[l][j].weight);
      visit(p + "bias", state.backbone.blocks[l][j].bias);
    }
  }
  for (std::size_t i = 0; i < state.backbone.classifier.size(); ++i) {
    const std::string p = "classifier." + std::to_string(i) + ".";
    visit(p + "weight", state.backbone.classifier[i].weight);
    visit(p + "bias", state.backbone.classifier[i].bias);
  }
  for (std::size_t l = 0; l < state.generators.size(); ++l) {
    const std::string p = "generator." + std::to_string(l) + ".";
    visit(p + "w_sigma", state.generators[l].w_sigma);
    visit(p + "b_sigma", state.generators[l].b_sigma);
    visit(p + "w_mu", state.generators[l].w_mu);
    visit(p + "b_mu", state.generators[l].b_mu);
  }
}

}  // namespace

void for_each_parameter(ModelState& state, const ParamVisitor& visit) { visit_params(state, visit); }
void for_each_parameter(const ModelState& state, const ConstParamVisitor& visit) { visit_params(state, visit); }

Gradients Gradients::zeros_for(const ModelState& state) {
  Gradients g;
  g.backbone = state.backbone.zeros_like();
  for (const GeneratorParams& p : state.generators) g.generators.push_back(p.zeros_like());
  return g;
}

void Gradients::for_each(const ConstParamVisitor& visit) const { visit_params(*this, visit); }

StreamTrace trace_forward(const ModelState& state, const Tensor& images) {
  check_input(state.spec, images);
  StreamTrace t;
  const Tensor* x = &images;
  for (int l = 0; l < state.spec.block_count(); ++l) {
    t.blocks.push_back(run_block(state, l, *x));
    x = &t.blocks.back().output();
  }
  run_head(state, t);
  return t;
}

StreamTrace trace_forward_fused(const ModelState& state, const Tensor& images, const StreamTrace& source) {
  check_input(state.spec, images);
  if (!state.has_generators()) throw InvalidInput("trace_forward_fused: model has no generators");
  if (source.blocks.size() != state.generators.size() || source.blocks.front().input.dim(0) != images.dim(0)) {
    throw InvalidInput("trace_forward_fused: source trace does not pair with this batch");
  }
  StreamTrace t;
  const Tensor* x = &images;
  for (int l = 0; l < state.spec.block_count(); ++l) {
    BlockTrace b = run_block(state, l, *x);
    b.style_source = source.blocks[static_cast<std::size_t>(l)].output();
    b.fused = cuti_fuse(b.pooled, b.style_source, state.generators[static_cast<std::size_t>(l)]);
    t.blocks.push_back(std::move(b));
    x = &t.blocks.back().output();
  }
  run_head(state, t);
  return t;
}

StreamBackward backward(const ModelState& state, const StreamTrace& trace, const Tensor& d_logits, Gradients& grads,
                        const std::vector<Tensor>* extra_block_grads) {
  if (!d_logits.same_shape(trace.logits)) throw InvalidInput("backward: d_logits shape mismatch");
  const auto& head = state.backbone.classifier;
  Tensor d_flat;
  if (head.size() == 2) {
    kernels::linear_backward_params(trace.hidden, d_logits, grads.backbone.classifier[1].weight,
                                    grads.backbone.classifier[1].bias);
    Tensor d_hidden;
    kernels::linear_backward_input(d_logits, head[1].weight, d_hidden);
    kernels::relu_backward(trace.hidden, d_hidden);
    kernels::linear_backward_params(trace.flat, d_hidden, grads.backbone.classifier[0].weight,
                                    grads.backbone.classifier[0].bias);
    kernels::linear_backward_input(d_hidden, head[0].weight, d_flat);
  } else {
    kernels::linear_backward_params(trace.flat, d_logits, grads.backbone.classifier[0].weight,
                                    grads.backbone.classifier[0].bias);
    kernels::linear_backward_input(d_logits, head[0].weight, d_flat);
  }

  StreamBackward result;
  const int L = static_cast<int>(trace.blocks.size());
  result.d_source_blocks.resize(static_cast<std::size_t>(L));
  Tensor g = d_flat.reshaped(trace.blocks.back().output().shape());
  for (int l = L - 1; l >= 0; --l) {
    const BlockTrace& b = trace.blocks[static_cast<std::size_t>(l)];
    if (extra_block_grads && !(*extra_block_grads)[static_cast<std::size_t>(l)].empty()) {
      add_into(g, (*extra_block_grads)[static_cast<std::size_t>(l)]);
    }
    if (b.is_fused()) {
      const GeneratorParams& gen = state.generators[static_cast<std::size_t>(l)];
      FuseGradients fg = cuti_fuse_backward(b.pooled, b.style_source, gen, g);
      GeneratorParams& acc = grads.generators[static_cast<std::size_t>(l)];
      add_into(acc.w_sigma, fg.d_params.w_sigma);
      add_into(acc.b_sigma, fg.d_params.b_sigma);
      add_into(acc.w_mu, fg.d_params.w_mu);
      add_into(acc.b_mu, fg.d_params.b_mu);
      grads.generators_active = true;
      result.d_source_blocks[static_cast<std::size_t>(l)] = std::move(fg.d_style_source);
      g = std::move(fg.d_content);
    }
    Tensor d_conv;
    kernels::maxpool2_backward(g, b.pool_argmax, b.conv_outputs.back().shape(), d_conv);
    const auto& convs = state.backbone.blocks[static_cast<std::size_t>(l)];
    for (int j = static_cast<int>(convs.size()) - 1; j >= 0; --j) {
      kernels::relu_backward(b.conv_outputs[static_cast<std::size_t>(j)], d_conv);
      const Tensor& in = j == 0 ? b.input : b.conv_outputs[static_cast<std::size_t>(j - 1)];
      auto& gp = grads.backbone.blocks[static_cast<std::size_t>(l)][static_cast<std::size_t>(j)];
      kernels::conv3x3_backward_params(in, d_conv, gp.weight, gp.bias);
      Tensor d_in;
      kernels::conv3x3_backward_input(d_conv, convs[static_cast<std::size_t>(j)].weight, d_in);
      d_conv = std::move(d_in);
    }
    g = std::move(d_conv);
  }
  result.d_input = std::move(g);
  return result;
}

Tensor forward_logits(const ModelState& state, const Tensor& images) { return trace_forward(state, images).logits; }

Tensor forward(const ModelState& state, const Tensor& images) { return trace_forward(state, images).probs; }

std::pair<Tensor, Tensor> forward_paired_cuti(const ModelState& state, const Tensor& x_s, const Tensor& x_i,
                                              bool bypass_generators) {
  if (!x_s.same_shape(x_i)) throw InvalidInput("forward_paired_cuti: x_s and x_i shapes differ");
  StreamTrace s = trace_forward(state, x_s);
  if (bypass_generators) return {s.probs, forward(state, x_i)};
  StreamTrace i = trace_forward_fused(state, x_i, s);
  return {std::move(s.probs), std::move(i.probs)};
}

}  // namespace cuti
