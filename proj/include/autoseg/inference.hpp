#pragma once

#include <functional>
#include <vector>

#include "autoseg/config.hpp"
#include "autoseg/network.hpp"

namespace autoseg {

struct WindowSpec {
  Shape3 size{32, 32, 32};
  double overlap = 0.25;
  Blending blending = Blending::gaussian;
  void validate() const;
};

// Maps a 1 x C x window tensor to 1 x K x window logits.
using WindowPredictor = std::function<Tensorf(const Tensorf&)>;

// Window start offsets along one axis: stride max(1, floor(win * (1 - overlap))),
// the last window flush with the end.
std::vector<int64_t> window_starts(int64_t extent, int64_t window, double overlap);

// Per-voxel blending weights over one window (all ones for uniform blending;
// separable Gaussian with sigma = window / 8 otherwise).
std::vector<float> importance_map(const Shape3& window, Blending blending);

// Sigmoid probabilities K x D x H x W for a C x D x H x W image. Inputs smaller than
// the window are zero-padded symmetrically and the output cropped back.
Tensorf sliding_window_infer(const WindowPredictor& predict, const Tensorf& image, int64_t out_channels,
                             const WindowSpec& window);
Tensorf sliding_window_infer(SegResNet& net, const Tensorf& image, const WindowSpec& window);

}  // namespace autoseg
