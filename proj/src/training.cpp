// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#include "cuti/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <unordered_set>

#include "cuti/error.hpp"
#include "cuti/feature_stats.hpp"

namespace cuti {

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::SL: return "sl";
    case TrainMode::TargetSpecified: return "target_specified";
    case TrainMode::TargetFree: return "target_free";
  }
  return "?";
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "sl") return TrainMode::SL;
  if (s == "target_specified") return TrainMode::TargetSpecified;
  if (s == "target_free") return TrainMode::TargetFree;
  throw InvalidInput("unknown training mode '" + s + "'");
}

void SynthConfig::validate() const {
  if (!(noisy_adain_fraction >= 0.0 && noisy_adain_fraction <= 1.0)) {
    throw InvalidInput("synth.noisy_adain_fraction must lie in [0, 1]");
  }
  if (!(noise_scale >= 0.0)) throw InvalidInput("synth.noise_scale must be >= 0");
  if (style_source != "random_other" && style_source != "self") {
    throw InvalidInput("synth.style_source must be 'random_other' or 'self'");
  }
  if (!(invert_prob >= 0.0 && invert_prob <= 1.0)) throw InvalidInput("synth.invert_prob must lie in [0, 1]");
  if (!(hue_jitter >= 0.0) || !(contrast_jitter >= 0.0) || !(brightness_jitter >= 0.0) || max_shift < 0) {
    throw InvalidInput("synth: jitter ranges must be >= 0");
  }
}

void TrainConfig::validate() const {
  if (max_epochs < 1) throw InvalidInput("train.max_epochs must be >= 1");
  if (batch_size < 1) throw InvalidInput("train.batch_size must be >= 1");
  optimizer.validate();
  loss.validate();
  synth.validate();
}

nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},           {"phase", r.phase},
          {"loss", r.loss},             {"source_acc", r.source_acc},
          {"offdomain_acc", r.offdomain_acc}, {"wall_time_s", r.wall_time_s}};
}

// ---------------------------------------------------------------------------
// Synthesis

LabeledBatch AugmentationSynthesizer::synthesize(const LabeledBatch& content, const SynthConfig& config,
                                                 std::uint64_t seed) const {
  LabeledBatch out = content;
  out.tag = DomainTag::Synthetic;
  if (content.size() == 0) return out;
  const Tensor& x = content.images;
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<double> buf(static_cast<std::size_t>(C) * plane);
  for (int n = 0; n < N; ++n) {
    const bool invert = unit(rng) < config.invert_prob;
    std::vector<double> mixing(static_cast<std::size_t>(C) * C);
    for (int r = 0; r < C; ++r)
      for (int c = 0; c < C; ++c) mixing[static_cast<std::size_t>(r) * C + c] = (r == c ? 1.0 : 0.0) + config.hue_jitter * uni(rng);
    const double contrast = 1.0 + config.contrast_jitter * uni(rng);
    const double brightness = config.brightness_jitter * uni(rng);
    const int span = 2 * config.max_shift + 1;
    const int sx = config.max_shift > 0 ? static_cast<int>(rng() % static_cast<std::uint64_t>(span)) - config.max_shift : 0;
    const int sy = config.max_shift > 0 ? static_cast<int>(rng() % static_cast<std::uint64_t>(span)) - config.max_shift : 0;

    const double* src = x.plane(n, 0);
    // Translate (zero fill) and optionally invert.
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
          const int hh = h - sy, ww = w - sx;
          double v = (hh >= 0 && hh < H && ww >= 0 && ww < W) ? src[c * plane + static_cast<std::size_t>(hh) * W + ww] : 0.0;
          buf[c * plane + static_cast<std::size_t>(h) * W + w] = invert ? 1.0 - v : v;
        }
    double* dst = out.images.plane(n, 0);
    for (std::size_t i = 0; i < plane; ++i) {
      for (int r = 0; r < C; ++r) {
        double v = 0.0;
        for (int c = 0; c < C; ++c) v += mixing[static_cast<std::size_t>(r) * C + c] * buf[c * plane + i];
        dst[r * plane + i] = v;
      }
    }
    for (int c = 0; c < C; ++c) {
      double mean = 0.0;
      for (std::size_t i = 0; i < plane; ++i) mean += dst[c * plane + i];
      mean /= static_cast<double>(plane);
      for (std::size_t i = 0; i < plane; ++i) {
        double& v = dst[c * plane + i];
        v = std::clamp((v - mean) * contrast + mean + brightness, 0.0, 1.0);
      }
    }
  }
  return out;
}

LabeledBatch synthesize_unauthorized(const LabeledBatch& source, const SynthConfig& config, std::uint64_t rng_seed,
                                     const UnauthorizedSynthesizer* synthesizer) {
  config.validate();
  if (source.size() == 0) throw InvalidInput("synthesize_unauthorized: empty batch");
  const int N = source.size();
  static const AugmentationSynthesizer kDefault;
  if (!synthesizer) synthesizer = &kDefault;

  const std::vector<int> order = shuffled_indices(N, derive_seed(rng_seed, 1));
  const int n_adain = static_cast<int>(std::lround(config.noisy_adain_fraction * N));
  std::vector<int> adain_idx(order.begin(), order.begin() + n_adain);
  std::vector<int> other_idx(order.begin() + n_adain, order.end());
  std::sort(adain_idx.begin(), adain_idx.end());
  std::sort(other_idx.begin(), other_idx.end());

  LabeledBatch out = source;
  out.tag = DomainTag::Synthetic;
  const std::size_t per = source.images.size() / static_cast<std::size_t>(N);

  if (!adain_idx.empty()) {
    std::mt19937_64 rng(derive_seed(rng_seed, 2));
    std::vector<int> donors;
    for (int i : adain_idx) {
      int j = i;
      if (config.style_source == "random_other" && N > 1) {
        j = static_cast<int>(rng() % static_cast<std::uint64_t>(N - 1));
        if (j >= i) ++j;
      }
      donors.push_back(j);
    }
    const Tensor content = source.images.gather(adain_idx);
    const StyleStats style = compute_style_stats(source.images.gather(donors));
    Tensor styled = restyle(content, style, config.noise_scale, derive_seed(rng_seed, 3));
    for (std::size_t k = 0; k < adain_idx.size(); ++k) {
      double* dst = out.images.data() + static_cast<std::size_t>(adain_idx[k]) * per;
      const double* src = styled.data() + k * per;
      for (std::size_t e = 0; e < per; ++e) dst[e] = std::clamp(src[e], 0.0, 1.0);
    }
  }
  if (!other_idx.empty()) {
    LabeledBatch part = synthesizer->synthesize(source.subset(other_idx), config, derive_seed(rng_seed, 4));
    if (part.size() != static_cast<int>(other_idx.size()) || part.images.size() != other_idx.size() * per) {
      throw InvalidInput("synthesizer returned a batch of the wrong size");
    }
    for (std::size_t k = 0; k < other_idx.size(); ++k) {
      std::copy_n(part.images.data() + k * per, per, out.images.data() + static_cast<std::size_t>(other_idx[k]) * per);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loops

namespace {

using Clock = std::chrono::steady_clock;

int count_correct(const Tensor& probs, std::span<const int> labels) {
  int correct = 0;
  for (int n = 0; n < probs.dim(0); ++n) {
    int best = 0;
    for (int k = 1; k < probs.dim(1); ++k)
      if (probs.at(n, k) > probs.at(n, best)) best = k;
    correct += best == labels[static_cast<std::size_t>(n)];
  }
  return correct;
}

void check_finite(double v, int epoch, int step) {
  if (!std::isfinite(v)) {
    throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
  }
}

void check_compatible(const LabeledBatch& data, const BackboneSpec& spec, const char* what) {
  if (data.size() == 0) throw InvalidInput(std::string(what) + ": empty dataset");
  const Tensor& x = data.images;
  if (x.rank() != 4 || x.dim(1) != spec.in_channels || x.dim(2) != spec.in_height || x.dim(3) != spec.in_width) {
    throw InvalidInput(std::string(what) + ": image shape " + x.shape_string() + " does not match the backbone input");
  }
  for (int y : data.labels)
    if (y < 0 || y >= spec.num_classes) throw InvalidInput(std::string(what) + ": label outside [0, K)");
}

std::vector<int> take(const std::vector<int>& perm, int begin, int count) {
  std::vector<int> idx(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) idx[static_cast<std::size_t>(k)] = perm[static_cast<std::size_t>(begin + k) % perm.size()];
  return idx;
}

}  // namespace

TrainResult train_sl(const LabeledBatch& source, const BackboneSpec& spec, const TrainConfig& config,
                     const EpochCallback& on_epoch) {
  config.validate();
  check_compatible(source, spec, "train_sl");
  TrainResult result;
  result.state = init_model(spec, config.seed, /*with_generators=*/false);
  Optimizer opt(config.optimizer);
  const int N = source.size(), B = config.batch_size;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto t0 = Clock::now();
    const std::vector<int> perm = shuffled_indices(N, derive_seed(config.seed, 2 * static_cast<std::uint64_t>(epoch) + 11));
    double loss_sum = 0.0;
    int correct = 0, steps = 0;
    for (int begin = 0; begin < N; begin += B, ++steps) {
      const int count = std::min(B, N - begin);
      const LabeledBatch batch = source.subset(take(perm, begin, count));
      const StreamTrace s = trace_forward(result.state, batch.images);
      const LossGradient lg = supervised_loss_grad(s.probs, batch.labels, config.loss.epsilon_y);
      check_finite(lg.value, epoch, steps);
      Gradients g = Gradients::zeros_for(result.state);
      backward(result.state, s, lg.d_source, g);
      opt.step(result.state, g);
      loss_sum += lg.value;
      correct += count_correct(s.probs, batch.labels);
    }
    result.state.meta.epoch = epoch + 1;
    EpochRecord r{epoch, "sl", loss_sum / steps, 100.0 * correct / N, 0.0,
                  std::chrono::duration<double>(Clock::now() - t0).count()};
    result.log.push_back(r);
    if (on_epoch) on_epoch(r);
  }
  return result;
}

TrainResult train_cuti(const LabeledBatch& source, const PoolProvider& pool_for_epoch, const BackboneSpec& spec,
                       const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  check_compatible(source, spec, "train_cuti source");
  TrainResult result;
  result.state = init_model(spec, config.seed, /*with_generators=*/true);
  Optimizer opt(config.optimizer);
  const int N = source.size(), B = config.batch_size;
  const LossVariant variant = config.loss.variant;

  std::unordered_set<std::uint64_t> source_hashes;
  for (int i = 0; i < N; ++i) source_hashes.insert(content_hash(source, i));

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto t0 = Clock::now();
    const LabeledBatch pool = pool_for_epoch(epoch);
    check_compatible(pool, spec, "train_cuti off-domain pool");
    if (!result.source_target_overlap) {
      for (int i = 0; i < pool.size(); ++i) {
        if (source_hashes.count(content_hash(pool, i))) {
          result.source_target_overlap = true;
          result.notes.push_back("source and off-domain training sets share samples; the objective is contradictory");
          break;
        }
      }
    }

    bool use_cuti = false, use_target = false;
    std::string phase;
    switch (variant) {
      case LossVariant::Alternating: {
        const Phase p = phase_for_epoch(epoch, config.loss.phase_offset);
        use_cuti = p == Phase::Cuti;
        use_target = p == Phase::Target;
        phase = to_string(p);
        break;
      }
      case LossVariant::L1: use_target = true; phase = "target"; break;
      case LossVariant::L2: use_cuti = true; phase = "cuti"; break;
      case LossVariant::L3: use_cuti = use_target = true; phase = "cuti+target"; break;
    }

    const std::uint64_t e = static_cast<std::uint64_t>(epoch);
    const std::vector<int> perm_s = shuffled_indices(N, derive_seed(config.seed, 4 * e + 11));
    const std::vector<int> perm_i = shuffled_indices(pool.size(), derive_seed(config.seed, 4 * e + 12));
    const std::vector<int> perm_t = shuffled_indices(pool.size(), derive_seed(config.seed, 4 * e + 13));

    double loss_sum = 0.0;
    int correct_s = 0, correct_x = 0, steps = 0;
    for (int begin = 0; begin < N; begin += B, ++steps) {
      const int count = std::min(B, N - begin);
      const LabeledBatch xs = source.subset(take(perm_s, begin, count));
      const StreamTrace s = trace_forward(result.state, xs.images);

      LabeledBatch xi, xt;
      StreamTrace ti, tt;
      if (use_cuti) {
        xi = pool.subset(take(perm_i, begin, count));
        ti = trace_forward_fused(result.state, xi.images, s);
      }
      if (use_target) {
        xt = pool.subset(take(perm_t, begin, count));
        tt = trace_forward(result.state, xt.images);
      }
      const LossGradient lg =
          adversarial_loss_grad(s.probs, xs.labels, use_cuti ? ti.probs : Tensor(), xi.labels,
                                use_target ? tt.probs : Tensor(), xt.labels, config.loss);
      check_finite(lg.value, epoch, steps);

      Gradients g = Gradients::zeros_for(result.state);
      if (use_target) backward(result.state, tt, lg.d_target, g);
      if (use_cuti) {
        StreamBackward bi = backward(result.state, ti, lg.d_cuti, g);
        backward(result.state, s, lg.d_source, g, &bi.d_source_blocks);
      } else {
        backward(result.state, s, lg.d_source, g);
      }
      opt.step(result.state, g);

      loss_sum += lg.value;
      correct_s += count_correct(s.probs, xs.labels);
      correct_x += use_target ? count_correct(tt.probs, xt.labels) : count_correct(ti.probs, xi.labels);
    }
    result.state.meta.epoch = epoch + 1;
    EpochRecord r{epoch, phase, loss_sum / steps, 100.0 * correct_s / N, 100.0 * correct_x / N,
                  std::chrono::duration<double>(Clock::now() - t0).count()};
    result.log.push_back(r);
    if (on_epoch) on_epoch(r);
  }
  if (variant == LossVariant::Alternating && config.max_epochs < 2) {
    result.notes.push_back("single epoch: only the " + result.log.front().phase + " phase executed");
  }
  return result;
}

TrainResult train_target_specified(const LabeledBatch& source, const LabeledBatch& target, const BackboneSpec& spec,
                                   const TrainConfig& config, const EpochCallback& on_epoch) {
  if (source.images.rank() != 4 || target.images.rank() != 4 ||
      !std::equal(source.images.shape().begin() + 1, source.images.shape().end(), target.images.shape().begin() + 1)) {
    throw InvalidInput("train_target_specified: source and target image shapes differ");
  }
  LabeledBatch pool = target;
  pool.tag = DomainTag::Cuti;
  return train_cuti(source, [&pool](int) -> const LabeledBatch& { return pool; }, spec, config, on_epoch);
}

TrainResult train_target_free(const LabeledBatch& source, const BackboneSpec& spec, const TrainConfig& config,
                              const EpochCallback& on_epoch, const UnauthorizedSynthesizer* synthesizer) {
  const std::uint64_t seed = config.seed;
  const SynthConfig synth = config.synth;
  return train_cuti(
      source,
      [&, seed, synth](int epoch) {
        return synthesize_unauthorized(source, synth, derive_seed(seed, 5000 + static_cast<std::uint64_t>(epoch)),
                                       synthesizer);
      },
      spec, config, on_epoch);
}

void fit_supervised(ModelState& state, const LabeledBatch& data, const FitOptions& options) {
  if (options.epochs < 0) throw InvalidInput("fit_supervised: epochs must be >= 0");
  if (options.epochs == 0) return;
  check_compatible(data, state.spec, "fit_supervised");
  Optimizer opt(options.optimizer);
  const int N = data.size(), B = options.batch_size;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const std::vector<int> perm = shuffled_indices(N, derive_seed(options.seed, static_cast<std::uint64_t>(epoch)));
    for (int begin = 0, step = 0; begin < N; begin += B, ++step) {
      const LabeledBatch batch = data.subset(take(perm, begin, std::min(B, N - begin)));
      const StreamTrace s = trace_forward(state, batch.images);
      const LossGradient lg = supervised_loss_grad(s.probs, batch.labels, options.epsilon_y);
      check_finite(lg.value, epoch, step);
      Gradients g = Gradients::zeros_for(state);
      backward(state, s, lg.d_source, g);
      opt.step(state, g);
      if (options.after_step) options.after_step(state);
    }
  }
}

}  // namespace cuti
