// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "cuti/backbone.hpp"

namespace cuti {

struct OptimizerSpec {
  std::string method = "sgd";  // "sgd" (heavy-ball momentum) or "adam"
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

/// First-order optimizer over every tensor of a ModelState. Slot buffers are
/// keyed by canonical parameter position. Generator tensors are left alone on
/// steps whose gradients never touched them.
class Optimizer {
 public:
  explicit Optimizer(OptimizerSpec spec);

  void step(ModelState& state, const Gradients& grads);
  const OptimizerSpec& spec() const { return spec_; }

 private:
  OptimizerSpec spec_;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
  std::vector<long> steps_;
};

}  // namespace cuti
