#pragma once

#include <vector>

#include "autoseg/layers.hpp"

namespace autoseg {

// lr0 * (1 + cos(pi * epoch / total)) / 2, exactly 0 at epoch >= total.
double cosine_lr(double lr0, int epoch, int total_epochs);

// Decoupled weight decay (p -= lr * wd * p) applied before the Adam update.
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8);

  void step(double lr);
  void zero_grad();
  int64_t steps() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  double wd_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

}  // namespace autoseg
