#pragma once

#include <cstddef>
#include <vector>

#include "pfr/tensor.hpp"

namespace pfr {

/// Auxiliary per-parameter buffers plus the step counter. `first` holds the
/// SGD momentum buffer or the Adam first moment; `second` the Adam second moment.
struct OptimizerState {
  std::size_t step = 0;
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
};

struct SgdOptions {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-6;
};

/// SGD with heavy-ball momentum and decoupled weight decay.
class Sgd {
 public:
  Sgd(std::vector<Tensor> params, SgdOptions options);

  // Applies one update at learning rate `lr` and clears gradients.
  // ContractError if any parameter has no gradient.
  void step(double lr);
  void step() { step(options_.lr); }

  const OptimizerState& state() const { return state_; }
  OptimizerState& state() { return state_; }
  const SgdOptions& options() const { return options_; }

 private:
  std::vector<Tensor> params_;
  SgdOptions options_;
  OptimizerState state_;
};

struct AdamWOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with bias correction and decoupled weight decay.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWOptions options);

  void step(double lr);
  void step() { step(options_.lr); }

  const OptimizerState& state() const { return state_; }
  OptimizerState& state() { return state_; }
  const AdamWOptions& options() const { return options_; }

 private:
  std::vector<Tensor> params_;
  AdamWOptions options_;
  OptimizerState state_;
};

enum class ScheduleKind { LinearWarmup, CosineDecay };

/// Learning rate at `step` of `total`: linear rise from 0 over the first
/// floor(warmup_ratio * total) steps, then linear or half-cosine decay to 0.
double lr_schedule(ScheduleKind kind, std::size_t step, std::size_t total, double warmup_ratio,
                   double base_lr);

}  // namespace pfr
