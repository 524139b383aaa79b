#include "pfr/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "pfr/error.hpp"

namespace pfr {
namespace {

void init_buffers(const std::vector<Tensor>& params, std::vector<std::vector<double>>& buffers) {
  buffers.clear();
  for (const auto& p : params) buffers.emplace_back(p.numel(), 0.0);
}

void require_grads(const std::vector<Tensor>& params, const char* who) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) {
      throw ContractError(std::string(who) + ": parameter " + std::to_string(i) +
                          " has no gradient");
    }
  }
}

}  // namespace

Sgd::Sgd(std::vector<Tensor> params, SgdOptions options)
    : params_(std::move(params)), options_(options) {
  init_buffers(params_, state_.first);
}

void Sgd::step(double lr) {
  require_grads(params_, "sgd_step");
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto w = params_[k].mutable_data();
    const auto g = params_[k].grad();
    auto& velocity = state_.first[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= lr * options_.weight_decay * w[i];
      velocity[i] = options_.momentum * velocity[i] + g[i];
      w[i] -= lr * velocity[i];
    }
    params_[k].clear_grad();
  }
  ++state_.step;
}

AdamW::AdamW(std::vector<Tensor> params, AdamWOptions options)
    : params_(std::move(params)), options_(options) {
  init_buffers(params_, state_.first);
  init_buffers(params_, state_.second);
}

void AdamW::step(double lr) {
  require_grads(params_, "adamw_step");
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double c1 = 1.0 - std::pow(options_.beta1, t);
  const double c2 = 1.0 - std::pow(options_.beta2, t);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto w = params_[k].mutable_data();
    const auto g = params_[k].grad();
    auto& m = state_.first[k];
    auto& v = state_.second[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g[i];
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      w[i] -= lr * options_.weight_decay * w[i];
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + options_.eps);
    }
    params_[k].clear_grad();
  }
}

double lr_schedule(ScheduleKind kind, std::size_t step, std::size_t total, double warmup_ratio,
                   double base_lr) {
  if (total == 0) throw ContractError("lr_schedule: total steps must be positive");
  if (step > total) throw ContractError("lr_schedule: step beyond total");
  if (warmup_ratio < 0.0 || warmup_ratio >= 1.0) {
    throw ContractError("lr_schedule: warmup_ratio must lie in [0, 1)");
  }
  const auto warmup = static_cast<std::size_t>(std::floor(warmup_ratio * static_cast<double>(total)));
  if (step < warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  switch (kind) {
    case ScheduleKind::LinearWarmup:
      return base_lr * (1.0 - progress);
    case ScheduleKind::CosineDecay:
      return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
  return 0.0;
}

}  // namespace pfr
