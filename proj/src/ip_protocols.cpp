// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#include "cuti/ip_protocols.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include "cuti/error.hpp"
#include "cuti/objectives.hpp"

namespace cuti {

std::string to_string(Corner c) {
  switch (c) {
    case Corner::TopLeft: return "top_left";
    case Corner::TopRight: return "top_right";
    case Corner::BottomLeft: return "bottom_left";
    case Corner::BottomRight: return "bottom_right";
  }
  return "?";
}

Corner corner_from_string(const std::string& s) {
  if (s == "top_left") return Corner::TopLeft;
  if (s == "top_right") return Corner::TopRight;
  if (s == "bottom_left") return Corner::BottomLeft;
  if (s == "bottom_right") return Corner::BottomRight;
  throw InvalidInput("unknown patch corner '" + s + "'");
}

void PatchSpec::validate() const {
  if (size < 0 || offset_x < 0 || offset_y < 0) throw InvalidInput("patch size and offsets must be >= 0");
  if (fill != "solid" && fill != "texture") throw InvalidInput("patch fill must be 'solid' or 'texture'");
  if (!(value >= 0.0 && value <= 1.0)) throw InvalidInput("patch value must lie in [0, 1]");
}

Tensor apply_patch(const Tensor& images, const PatchSpec& patch) {
  patch.validate();
  require_feature_map(images, "apply_patch");
  Tensor out = images;
  if (patch.size == 0) return out;
  const int N = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
  if (patch.size + patch.offset_y > H || patch.size + patch.offset_x > W) {
    throw InvalidInput("patch of size " + std::to_string(patch.size) + " does not fit inside " +
                       std::to_string(H) + "x" + std::to_string(W) + " images");
  }
  const bool top = patch.corner == Corner::TopLeft || patch.corner == Corner::TopRight;
  const bool left = patch.corner == Corner::TopLeft || patch.corner == Corner::BottomLeft;
  const int y0 = top ? patch.offset_y : H - patch.offset_y - patch.size;
  const int x0 = left ? patch.offset_x : W - patch.offset_x - patch.size;

  std::vector<double> texture(static_cast<std::size_t>(C) * patch.size * patch.size, patch.value);
  if (patch.fill == "texture") {
    std::mt19937_64 rng(patch.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (double& v : texture) v = unit(rng);
  }
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < patch.size; ++y)
        for (int x = 0; x < patch.size; ++x)
          out.at(n, c, y0 + y, x0 + x) = texture[(static_cast<std::size_t>(c) * patch.size + y) * patch.size + x];
  return out;
}

LabeledBatch apply_patch(const LabeledBatch& batch, const PatchSpec& patch) {
  LabeledBatch out = batch;
  out.images = apply_patch(batch.images, patch);
  return out;
}

std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::FTAL: return "ftal";
    case AttackKind::RTAL: return "rtal";
    case AttackKind::EWC: return "ewc";
    case AttackKind::AU: return "au";
    case AttackKind::Overwrite: return "overwrite";
  }
  return "?";
}

AttackKind attack_kind_from_string(const std::string& s) {
  std::string k = s;
  std::transform(k.begin(), k.end(), k.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (k == "ftal") return AttackKind::FTAL;
  if (k == "rtal") return AttackKind::RTAL;
  if (k == "ewc") return AttackKind::EWC;
  if (k == "au") return AttackKind::AU;
  if (k == "overwrite" || k == "overwriting") return AttackKind::Overwrite;
  throw InvalidInput("unknown attack kind '" + s + "'");
}

void AttackSpec::validate() const {
  if (epochs < 0) throw InvalidInput("attack.epochs must be >= 0");
  if (!(learning_rate > 0.0)) throw InvalidInput("attack.learning_rate must be > 0");
  if (!(data_fraction > 0.0 && data_fraction <= 1.0)) throw InvalidInput("attack.data_fraction must lie in (0, 1]");
  if (batch_size < 1) throw InvalidInput("attack.batch_size must be >= 1");
  if (!(ewc_lambda >= 0.0)) throw InvalidInput("attack.ewc_lambda must be >= 0");
  if (fisher_samples < 1) throw InvalidInput("attack.fisher_samples must be >= 1");
  if (!(attacker_poison_fraction >= 0.0 && attacker_poison_fraction <= 1.0)) {
    throw InvalidInput("attack.attacker_poison_fraction must lie in [0, 1]");
  }
  attacker_patch.validate();
  OptimizerSpec{optimizer, learning_rate}.validate();
}

std::vector<Tensor> diagonal_fisher(const ModelState& state, const LabeledBatch& data, int samples, double epsilon_y) {
  if (data.size() == 0) throw InvalidInput("diagonal_fisher: empty data");
  const int n = std::min(samples, data.size());
  std::vector<Tensor> fisher;
  for_each_parameter(state, [&](const std::string& name, const Tensor& t) {
    if (name.rfind("generator.", 0) != 0) fisher.push_back(Tensor(t.shape()));
  });
  for (int i = 0; i < n; ++i) {
    const LabeledBatch one = data.slice(i, i + 1);
    const StreamTrace tr = trace_forward(state, one.images);
    const LossGradient lg = supervised_loss_grad(tr.probs, one.labels, epsilon_y);
    Gradients g = Gradients::zeros_for(state);
    backward(state, tr, lg.d_source, g);
    std::size_t k = 0;
    g.for_each([&](const std::string& name, const Tensor& t) {
      if (name.rfind("generator.", 0) == 0) return;
      Tensor& f = fisher[k++];
      for (std::size_t e = 0; e < t.size(); ++e) f[e] += t[e] * t[e] / n;
    });
  }
  return fisher;
}

namespace {

EvalReport patch_report(const ModelState& model, const DomainDataset& source, const PatchSpec& patch,
                        const std::string& method, double* clean_out, double* patched_out) {
  EvalReport r;
  const double clean = accuracy(model, source.test);
  const double patched = accuracy(model, apply_patch(source.test, patch));
  r.add(method, source.name, source.name, "clean", clean);
  r.add(method, source.name, source.name, "patched", patched);
  if (clean_out) *clean_out = clean;
  if (patched_out) *patched_out = patched;
  return r;
}

}  // namespace

AttackResult run_attack(const ModelState& state, const AttackSpec& attack, const DomainDataset& source,
                        const PatchSpec& owner_patch, const LabeledBatch* aux, const SynthConfig& synth) {
  attack.validate();
  owner_patch.validate();
  AttackResult result;
  result.state = state;

  if (attack.epochs > 0) {
    const LabeledBatch& train = source.train;
    const int n = std::max(1, static_cast<int>(std::lround(attack.data_fraction * train.size())));
    std::vector<int> idx = shuffled_indices(train.size(), derive_seed(attack.seed, 1));
    idx.resize(static_cast<std::size_t>(n));
    const LabeledBatch subset = train.subset(idx);

    FitOptions fit;
    fit.epochs = attack.epochs;
    fit.batch_size = attack.batch_size;
    fit.optimizer.method = attack.optimizer;
    fit.optimizer.learning_rate = attack.learning_rate;
    fit.seed = derive_seed(attack.seed, 2);

    switch (attack.kind) {
      case AttackKind::FTAL:
        fit_supervised(result.state, subset, fit);
        break;
      case AttackKind::RTAL:
        reinit_output_layer(result.state, derive_seed(attack.seed, 3));
        fit_supervised(result.state, subset, fit);
        break;
      case AttackKind::EWC: {
        const std::vector<Tensor> fisher = diagonal_fisher(result.state, subset, attack.fisher_samples, fit.epsilon_y);
        std::vector<Tensor> anchor;
        for_each_parameter(std::as_const(result.state), [&](const std::string& name, const Tensor& t) {
          if (name.rfind("generator.", 0) != 0) anchor.push_back(t);
        });
        // Proximal step for lambda * sum F (theta - theta0)^2 after every gradient step:
        // exact minimizer of the penalty plus a quadratic pull toward the unpenalized iterate.
        const double c = 2.0 * attack.learning_rate * attack.ewc_lambda;
        fit.after_step = [&, c](ModelState& s) {
          std::size_t k = 0;
          for_each_parameter(s, [&](const std::string& name, Tensor& t) {
            if (name.rfind("generator.", 0) == 0) return;
            const Tensor& f = fisher[k];
            const Tensor& a = anchor[k];
            ++k;
            for (std::size_t e = 0; e < t.size(); ++e) {
              const double shrink = 1.0 + c * (f[e] + 1e-8);
              t[e] = std::isinf(shrink) ? a[e] : a[e] + (t[e] - a[e]) / shrink;
            }
          });
        };
        fit_supervised(result.state, subset, fit);
        break;
      }
      case AttackKind::AU: {
        LabeledBatch unlabeled = aux ? *aux : synthesize_unauthorized(subset, synth, derive_seed(attack.seed, 4));
        if (unlabeled.size() == 0) throw InvalidInput("AU attack: empty auxiliary set");
        // Pseudo-labels from the protected model, fixed for the whole attack.
        const Tensor probs = forward(result.state, unlabeled.images);
        for (int i = 0; i < unlabeled.size(); ++i) {
          int best = 0;
          for (int k = 1; k < probs.dim(1); ++k)
            if (probs.at(i, k) > probs.at(i, best)) best = k;
          unlabeled.labels[static_cast<std::size_t>(i)] = best;
        }
        fit_supervised(result.state, unlabeled, fit);
        break;
      }
      case AttackKind::Overwrite: {
        if (attack.attacker_label < 0 || attack.attacker_label >= state.spec.num_classes) {
          throw InvalidInput("attack.attacker_label outside [0, K)");
        }
        LabeledBatch mixed = subset;
        const int poisoned = static_cast<int>(std::lround(attack.attacker_poison_fraction * n));
        if (poisoned > 0) {
          std::vector<int> which = shuffled_indices(n, derive_seed(attack.seed, 5));
          which.resize(static_cast<std::size_t>(poisoned));
          std::sort(which.begin(), which.end());
          const LabeledBatch stamped = apply_patch(subset.subset(which), attack.attacker_patch);
          const std::size_t per = subset.images.size() / static_cast<std::size_t>(n);
          for (std::size_t k = 0; k < which.size(); ++k) {
            std::copy_n(stamped.images.data() + k * per, per,
                        mixed.images.data() + static_cast<std::size_t>(which[k]) * per);
            mixed.labels[static_cast<std::size_t>(which[k])] = attack.attacker_label;
          }
        }
        fit_supervised(result.state, mixed, fit);
        break;
      }
    }
  }

  result.report = patch_report(result.state, source, owner_patch, "attack." + to_string(attack.kind),
                               &result.clean_acc, &result.patched_acc);
  result.report.meta["protocol"] = "attack";
  result.report.meta["attack"] = {{"kind", to_string(attack.kind)}, {"epochs", attack.epochs},
                                  {"learning_rate", attack.learning_rate}, {"data_fraction", attack.data_fraction},
                                  {"optimizer", attack.optimizer}, {"seed", attack.seed}};
  result.report.finalize();
  return result;
}

OwnershipResult run_ownership_verification(const DomainDataset& source, const BackboneSpec& spec,
                                           const TrainConfig& config, const PatchSpec& patch,
                                           bool with_sl_control, const EpochCallback& on_epoch) {
  const LabeledBatch target = apply_patch(source.train, patch);
  OwnershipResult out;
  out.training = train_target_specified(source.train, target, spec, config, on_epoch);
  out.model = out.training.state;
  out.report = patch_report(out.model, source, patch, "cuti", nullptr, nullptr);
  if (with_sl_control) {
    out.sl_model = train_sl(source.train, spec, config).state;
    const EvalReport sl = patch_report(out.sl_model, source, patch, "sl", nullptr, nullptr);
    out.report.cells.insert(out.report.cells.begin(), sl.cells.begin(), sl.cells.end());
  }
  out.report.meta["protocol"] = "ownership";
  out.report.meta["seed"] = config.seed;
  if (out.training.source_target_overlap) out.report.meta["source_target_overlap"] = true;
  out.report.finalize();
  return out;
}

AuthorizationResult run_applicability_authorization(const std::vector<DomainDataset>& domains, int source_index,
                                                    const BackboneSpec& spec, const TrainConfig& config,
                                                    const PatchSpec& auth_patch, const EpochCallback& on_epoch) {
  if (source_index < 0 || source_index >= static_cast<int>(domains.size())) {
    throw InvalidInput("authorization: source index out of range");
  }
  const DomainDataset& source = domains[static_cast<std::size_t>(source_index)];
  const LabeledBatch authorized = apply_patch(source.train, auth_patch);
  const std::uint64_t seed = config.seed;
  const SynthConfig synth = config.synth;

  AuthorizationResult out;
  out.training = train_cuti(
      authorized,
      [&](int epoch) {
        const LabeledBatch fake =
            synthesize_unauthorized(source.train, synth, derive_seed(seed, 7000 + static_cast<std::uint64_t>(epoch)));
        LabeledBatch pool = concat(source.train, fake, DomainTag::Cuti);
        return concat(pool, apply_patch(fake, auth_patch), DomainTag::Cuti);
      },
      spec, config, on_epoch);
  out.model = out.training.state;

  for (const char* state : {"patched", "clean"}) {
    for (const auto& d : domains) {
      const LabeledBatch test = std::string(state) == "patched" ? apply_patch(d.test, auth_patch) : d.test;
      out.report.add("authorization", source.name, d.name, state, accuracy(out.model, test));
    }
  }
  out.report.meta["protocol"] = "authorization";
  out.report.meta["seed"] = config.seed;
  out.report.finalize();
  return out;
}

}  // namespace cuti
