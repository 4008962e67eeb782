#include "vmae/optimizer.hpp"

#include "vmae/errors.hpp"

#include <cmath>

namespace vmae {

void AdamWConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("optimizer: lr must be finite and >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("optimizer: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("optimizer: eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("optimizer: weight_decay must be >= 0");
  if (!(grad_clip >= 0.0)) throw ConfigError("optimizer: grad_clip must be >= 0");
}

AdamWState AdamWState::zeros_like(const ModelParams& params) {
  AdamWState s;
  for (const auto& t : params.tensors()) {
    s.m.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
    s.v.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
  }
  return s;
}

void adamw_step(Matrix& p, Matrix& m, Matrix& v, const Matrix& g, long t, double lr, const AdamWConfig& cfg) {
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
  v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
  p -= (lr * cfg.weight_decay) * p;
  p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
}

void adamw_update(ModelParams& params, AdamWState& state, const Gradients& grads, double lr,
                  const AdamWConfig& cfg) {
  auto& tensors = params.tensors();
  if (grads.size() != tensors.size() || state.m.size() != tensors.size() || state.v.size() != tensors.size()) {
    throw StructuralError("adamw_update: gradients/moments do not match the parameter list");
  }
  const long t = state.updates + 1;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    adamw_step(tensors[i].value, state.m[i], state.v[i], grads[i], t, lr, cfg);
  }
  state.updates = t;
}

double global_grad_norm(const Gradients& grads) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

bool all_finite(const Gradients& grads) {
  for (const auto& g : grads) {
    if (!g.allFinite()) return false;
  }
  return true;
}

double clip_grad_norm(Gradients& grads, double max_norm) {
  const double norm = global_grad_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads) g *= s;
  }
  return norm;
}

LrSchedule::LrSchedule(double base_lr, long total_steps, double warmup_fraction)
    : base_(base_lr), total_(std::max(1L, total_steps)) {
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw ConfigError("warmup fraction must lie in [0, 1)");
  }
  warmup_ = static_cast<long>(std::floor(warmup_fraction * static_cast<double>(total_)));
}

double LrSchedule::at(long step) const {
  if (step < warmup_) return base_ * static_cast<double>(step + 1) / static_cast<double>(warmup_);
  const long span = total_ - warmup_;
  if (span <= 0) return base_;
  const double progress = std::min(1.0, static_cast<double>(step - warmup_) / static_cast<double>(span));
  constexpr double kPi = 3.14159265358979323846;
  return base_ * 0.5 * (1.0 + std::cos(kPi * progress));
}

}  // namespace vmae
