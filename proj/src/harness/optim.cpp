#include "glip/harness/optim.hpp"

#include <cmath>
#include <numbers>

namespace glip {

double scheduled_lr(double peak, std::size_t step, std::size_t total, double warmup_fraction) {
  if (total == 0) return peak;
  const double warm = std::max(1.0, std::floor(warmup_fraction * static_cast<double>(total)));
  const double s = static_cast<double>(step);
  if (s < warm) return peak * (s + 1.0) / warm;
  const double progress = (s - warm) / std::max(1.0, static_cast<double>(total) - warm);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, progress)));
}

double clip_grad_norm(const nn::ParamStore& ps, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, t] : ps.all())
    if (t.has_grad())
      for (double g : t.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (const auto& [name, t] : ps.all()) {
      if (!t.has_grad()) continue;
      Tensor h = t;
      for (double& g : h.mutable_grad()) g *= f;
    }
  }
  return norm;
}

void AdamW::step(const nn::ParamStore& ps, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (const auto& [name, param] : ps.all()) {
    if (!param.has_grad()) continue;
    Tensor p = param;
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(p.numel(), 0.0);
      v.assign(p.numel(), 0.0);
    }
    const auto g = p.grad();
    auto w = p.mutable_data();
    const double decay = p.rank() > 1 ? wd_ : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
      v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
      w[i] -= lr * (decay * w[i] + (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_));
    }
  }
}

}  // namespace glip
