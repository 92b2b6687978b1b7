// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#include "cuti/optimizer.hpp"

#include <cmath>

#include "cuti/error.hpp"

namespace cuti {

void OptimizerSpec::validate() const {
  if (method != "sgd" && method != "adam") throw InvalidInput("optimizer: unknown method '" + method + "'");
  if (!(learning_rate >= 0.0)) throw InvalidInput("optimizer: learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidInput("optimizer: momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw InvalidInput("optimizer: weight decay must be >= 0");
}

Optimizer::Optimizer(OptimizerSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

void Optimizer::step(ModelState& state, const Gradients& grads) {
  std::vector<const Tensor*> g;
  std::vector<bool> is_generator;
  grads.for_each([&](const std::string& name, const Tensor& t) {
    g.push_back(&t);
    is_generator.push_back(name.rfind("generator.", 0) == 0);
  });

  std::size_t slot = 0;
  for_each_parameter(state, [&](const std::string& name, Tensor& value) {
    if (slot >= g.size() || !g[slot]->same_shape(value)) {
      throw InvalidInput("optimizer: gradient layout does not match parameter '" + name + "'");
    }
    const std::size_t i = slot++;
    if (is_generator[i] && !grads.generators_active) return;
    if (first_.size() <= i) {
      first_.resize(i + 1);
      second_.resize(i + 1);
      steps_.resize(i + 1, 0);
    }
    if (first_[i].empty()) {
      first_[i] = Tensor(value.shape());
      if (spec_.method == "adam") second_[i] = Tensor(value.shape());
    }
    const Tensor& grad = *g[i];
    const double lr = spec_.learning_rate, wd = spec_.weight_decay;
    Tensor& m = first_[i];
    if (spec_.method == "sgd") {
      for (std::size_t k = 0; k < value.size(); ++k) {
        const double d = grad[k] + wd * value[k];
        m[k] = spec_.momentum * m[k] + d;
        value[k] -= lr * m[k];
      }
    } else {
      Tensor& v = second_[i];
      const long t = ++steps_[i];
      const double c1 = 1.0 - std::pow(spec_.beta1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(spec_.beta2, static_cast<double>(t));
      for (std::size_t k = 0; k < value.size(); ++k) {
        const double d = grad[k] + wd * value[k];
        m[k] = spec_.beta1 * m[k] + (1.0 - spec_.beta1) * d;
        v[k] = spec_.beta2 * v[k] + (1.0 - spec_.beta2) * d * d;
        value[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + spec_.epsilon);
      }
    }
  });
  if (slot != g.size()) throw InvalidInput("optimizer: gradient layout has extra tensors");
}

}  // namespace cuti
