#include "prod/optimizer.hpp"

#include <cmath>

#include "prod/common.hpp"

namespace prod {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.learning_rate > 0.0)) throw ConfigError("optimizer: learning rate must be positive");
  if (cfg_.total_steps == 0) throw ConfigError("optimizer: total_steps must be positive");
  if (!(cfg_.warmup_ratio >= 0.0 && cfg_.warmup_ratio < 1.0)) {
    throw ConfigError("optimizer: warmup_ratio must lie in [0, 1)");
  }
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    if (!p.requires_grad()) throw ContractError("optimizer params must require gradients");
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamW::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

double AdamW::current_lr() const {
  const std::size_t warmup_steps =
      static_cast<std::size_t>(cfg_.warmup_ratio * static_cast<double>(cfg_.total_steps));
  const std::size_t t = t_;  // 0-based index of the upcoming step
  if (warmup_steps > 0 && t < warmup_steps) {
    return cfg_.learning_rate * static_cast<double>(t + 1) / static_cast<double>(warmup_steps);
  }
  const std::size_t decay_span = cfg_.total_steps - warmup_steps;
  if (decay_span == 0 || t >= cfg_.total_steps) return 0.0;
  return cfg_.learning_rate * static_cast<double>(cfg_.total_steps - t) /
         static_cast<double>(decay_span);
}

void AdamW::step() {
  const double lr = current_lr();
  t_ += 1;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    auto& values = params_[pi].mutable_values();
    const auto& grad = params_[pi].grad();
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      values[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * values[i]);
    }
  }
}

}  // namespace prod
