#include "autoseg/optim.hpp"

#include <cmath>
#include <numbers>

#include "autoseg/error.hpp"

namespace autoseg {

double cosine_lr(double lr0, int epoch, int total_epochs) {
  if (total_epochs <= 0) throw ValidationError("total_epochs must be positive");
  if (epoch <= 0) return lr0;
  if (epoch >= total_epochs) return 0.0;
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / total_epochs));
}

AdamW::AdamW(std::vector<Parameter*> params, double weight_decay, double beta1, double beta2, double eps)
    : params_(std::move(params)), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto* p : params_) {
    m_.emplace_back(static_cast<size_t>(p->value.numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(p->value.numel()), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const double decay = 1.0 - lr * wd_;
  for (size_t k = 0; k < params_.size(); ++k) {
    float* w = params_[k]->value.data();
    const float* g = params_[k]->grad.data();
    double* m = m_[k].data();
    double* v = v_[k].data();
    const int64_t n = params_[k]->value.numel();
#pragma omp parallel for simd schedule(static)
    for (int64_t i = 0; i < n; ++i) {
      const double gi = g[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] = static_cast<float>(static_cast<double>(w[i]) * decay - lr * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

void AdamW::zero_grad() {
  for (auto* p : params_) p->grad.fill(0.0f);
}

}  // namespace autoseg
