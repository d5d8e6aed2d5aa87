#pragma once

#include <vector>

#include "autoseg/config.hpp"
#include "autoseg/tensor.hpp"

namespace autoseg {

// B x K flags: 1 where the (item, class) pair carries a usable annotation.
using ClassMask = Tensor<uint8_t>;

ClassMask full_class_mask(int64_t batch, int64_t classes);

// Per-level weights 1 / 2^i, i = 0..levels-1 (not renormalised).
std::vector<double> deep_supervision_weights(int levels);

// Nearest-neighbour resize of a B x K x D x H x W mask by an integer factor f =
// in / out per axis; output voxel o samples input o * f. ShapeError if in % out != 0.
Mask downsample_nearest(const Mask& target, const Shape3& out);

// Sigmoid Dice (squared denominator) plus focal loss, each computed per
// (item, class) and averaged over the entries enabled in class_mask.
// grad (optional) receives dL/dlogits with exact zeros on masked entries.
// Throws ValidationError when every entry is masked.
template <typename T>
double dice_focal_loss(const Tensor<T>& logits, const Mask& target, const ClassMask& class_mask,
                       const LossSettings& settings, Tensor<T>* grad = nullptr);

template <typename T>
struct DeepSupervisionResult {
  double total = 0.0;
  std::vector<double> level_losses;  // unweighted
  std::vector<Tensor<T>> grads;      // weighted, one per level
};
using DeepSupervisionLoss = DeepSupervisionResult<float>;

// sum_i w_i * loss(logits[i], target resized to logits[i])
template <typename T>
DeepSupervisionResult<T> deep_supervision_loss(const std::vector<Tensor<T>>& logits, const Mask& target,
                                               const ClassMask& class_mask, const LossSettings& settings,
                                               bool want_grads = true);

}  // namespace autoseg
