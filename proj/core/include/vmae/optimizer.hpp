#pragma once

#include "vmae/params.hpp"

#include <vector>

namespace vmae {

struct AdamWConfig {
  double lr = 0.00025;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.04;
  double grad_clip = 0.0;  // global L2 norm; 0 disables

  void validate() const;
  friend bool operator==(const AdamWConfig&, const AdamWConfig&) = default;
};

// First and second moments per parameter tensor; `updates` counts applied
// updates and drives bias correction.
struct AdamWState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long updates = 0;

  static AdamWState zeros_like(const ModelParams& params);
};

// Decoupled weight decay followed by the bias-corrected Adam step:
//   p <- p - lr*wd*p
//   p <- p - lr * mhat / (sqrt(vhat) + eps)
void adamw_update(ModelParams& params, AdamWState& state, const Gradients& grads, double lr,
                  const AdamWConfig& config);

// The same update for one tensor; t is the 1-based update count.
void adamw_step(Matrix& p, Matrix& m, Matrix& v, const Matrix& g, long t, double lr, const AdamWConfig& config);

double global_grad_norm(const Gradients& grads);
bool all_finite(const Gradients& grads);
// Rescales in place when the global norm exceeds max_norm; returns the norm before clipping.
double clip_grad_norm(Gradients& grads, double max_norm);

// Linear warmup to base_lr over the first floor(warmup_fraction * total)
// steps, then cosine decay to zero.
class LrSchedule {
 public:
  LrSchedule(double base_lr, long total_steps, double warmup_fraction);
  double at(long step) const;
  long warmup_steps() const { return warmup_; }

 private:
  double base_;
  long total_;
  long warmup_;
};

}  // namespace vmae
