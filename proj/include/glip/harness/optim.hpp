#pragma once

#include <map>
#include <string>
#include <vector>

#include "glip/nn/params.hpp"

namespace glip {

/// Linear warmup over the first `warmup` steps, then cosine decay to zero
/// at `total` steps.
double scheduled_lr(double peak, std::size_t step, std::size_t total, double warmup_fraction);

/// Rescales all gradients so their global L2 norm is at most `max_norm`
/// (no-op when max_norm is 0). Returns the norm before clipping.
double clip_grad_norm(const nn::ParamStore& ps, double max_norm);

/// Decoupled weight decay Adam. Decay skips 1-D tensors (biases, norms).
class AdamW {
 public:
  AdamW(double beta1, double beta2, double eps, double weight_decay)
      : b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {}

  void step(const nn::ParamStore& ps, double lr);
  std::size_t steps() const { return t_; }

 private:
  double b1_, b2_, eps_, wd_;
  std::size_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

}  // namespace glip
