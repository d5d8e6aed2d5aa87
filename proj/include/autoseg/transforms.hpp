#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <utility>

#include "autoseg/volume.hpp"

namespace autoseg {

struct ChannelDropout {
  int channel = 0;
  double prob = 0.5;
  bool operator==(const ChannelDropout&) const = default;
};

struct AugmentationPolicy {
  double affine_prob = 0.2;
  double rotate_degrees = 15.0;  // uniform in [-r, r] about each axis
  double scale_range = 0.1;      // per-axis zoom in [1 - s, 1 + s]
  std::array<double, 3> flip_prob{0.5, 0.5, 0.5};
  double intensity_scale_prob = 0.2;
  double intensity_scale_range = 0.1;
  double intensity_shift_prob = 0.2;
  double intensity_shift_range = 0.1;  // fraction of the channel std
  double noise_prob = 0.2;
  double noise_std = 0.1;
  double blur_prob = 0.2;
  double blur_sigma_min = 0.5;
  double blur_sigma_max = 1.5;
  std::optional<ChannelDropout> channel_dropout;

  void validate() const;
  static AugmentationPolicy identity();

  bool operator==(const AugmentationPolicy&) const = default;
};

// Zero mean / unit std per channel over nonzero voxels; zero voxels stay zero.
// All-zero and constant channels come out all-zero.
MultiChannelVolume normalize(const MultiChannelVolume& vol);
void normalize_inplace(Tensorf& image);

// Channel k is 1 exactly where the label belongs to spec.classes[k].index.
MultiLabelMask map_labels(const LabelVolume& lab, const SubregionSpec& spec);

// Spatial ops are applied identically to image (trilinear) and mask (nearest);
// intensity ops touch the image only and skip all-zero (absent) channels.
// Deterministic in rng_seed.
std::pair<MultiChannelVolume, MultiLabelMask> apply_augmentation(const MultiChannelVolume& vol,
                                                                 const MultiLabelMask& mask,
                                                                 const AugmentationPolicy& policy, uint64_t rng_seed);
void augment_inplace(Tensorf& image, Mask& mask, const AugmentationPolicy& policy, uint64_t rng_seed);

// Whether channel dropout fires for this seed (independent of the other draws).
bool channel_dropout_fires(const AugmentationPolicy& policy, uint64_t rng_seed);

// Fixed-size patch; axes shorter than the patch are zero-padded symmetrically.
// With probability fg_prob the patch is centred on a uniformly chosen foreground
// voxel (any mask channel set), otherwise on a uniform voxel.
std::pair<Tensorf, Mask> crop_patch(const Tensorf& image, const Mask& mask, const Shape3& patch, uint64_t rng_seed,
                                    double fg_prob = 0.7);
std::pair<MultiChannelVolume, MultiLabelMask> crop_patch(const MultiChannelVolume& vol, const MultiLabelMask& mask,
                                                         const Shape3& patch, uint64_t rng_seed,
                                                         double fg_prob = 0.7);

// Symmetric zero padding up to at least `target` per axis; returns the leading pad.
template <typename T>
Tensor<T> pad_to(const Tensor<T>& t, const Shape3& target, std::array<int64_t, 3>* lead = nullptr);

// Flip a CDHW tensor along spatial axis (0 = d, 1 = h, 2 = w).
template <typename T>
void flip_axis(Tensor<T>& t, int axis);

}  // namespace autoseg
