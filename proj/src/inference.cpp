#include "autoseg/inference.hpp"

#include <algorithm>
#include <cmath>

#include "autoseg/error.hpp"
#include "autoseg/transforms.hpp"

namespace autoseg {

void WindowSpec::validate() const {
  if (size.d < 1 || size.h < 1 || size.w < 1) throw ValidationError("window size must be positive");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw ValidationError("window overlap must lie in [0, 1)");
}

std::vector<int64_t> window_starts(int64_t extent, int64_t window, double overlap) {
  if (extent <= window) return {0};
  const int64_t interval = std::max<int64_t>(1, static_cast<int64_t>(std::floor(window * (1.0 - overlap))));
  const int64_t n = (extent - window + interval - 1) / interval + 1;
  std::vector<int64_t> out;
  for (int64_t i = 0; i < n; ++i) {
    const int64_t s = std::min(i * interval, extent - window);
    if (out.empty() || out.back() != s) out.push_back(s);
  }
  return out;
}

std::vector<float> importance_map(const Shape3& window, Blending blending) {
  std::vector<float> w(static_cast<size_t>(window.voxels()), 1.0f);
  if (blending == Blending::uniform) return w;
  std::array<std::vector<double>, 3> axis;
  for (int a = 0; a < 3; ++a) {
    const int64_t n = window[a];
    const double sigma = static_cast<double>(n) / 8.0;
    const double c = (static_cast<double>(n) - 1.0) / 2.0;
    axis[static_cast<size_t>(a)].resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      const double d = static_cast<double>(i) - c;
      axis[static_cast<size_t>(a)][static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    }
  }
  size_t k = 0;
  for (int64_t z = 0; z < window.d; ++z) {
    for (int64_t y = 0; y < window.h; ++y) {
      for (int64_t x = 0; x < window.w; ++x) {
        const double v = axis[0][static_cast<size_t>(z)] * axis[1][static_cast<size_t>(y)] * axis[2][static_cast<size_t>(x)];
        w[k++] = static_cast<float>(std::max(v, 1e-6));
      }
    }
  }
  return w;
}

Tensorf sliding_window_infer(const WindowPredictor& predict, const Tensorf& image, int64_t out_channels,
                             const WindowSpec& window) {
  window.validate();
  if (image.rank() != 4) throw ShapeError("image must be C x D x H x W, got " + shape_str(image.shape()));
  const Shape3 orig = image.spatial();
  std::array<int64_t, 3> lead{0, 0, 0};
  const Tensorf padded = pad_to(image, window.size, &lead);
  const Shape3 s = padded.spatial();
  const int64_t C = padded.dim(0);
  const int64_t K = out_channels;
  const Shape3 win = window.size;

  const auto sz = window_starts(s.d, win.d, window.overlap);
  const auto sy = window_starts(s.h, win.h, window.overlap);
  const auto sx = window_starts(s.w, win.w, window.overlap);
  const std::vector<float> weight = importance_map(win, window.blending);

  std::vector<double> acc(static_cast<size_t>(K * s.voxels()), 0.0);
  std::vector<double> norm(static_cast<size_t>(s.voxels()), 0.0);
  Tensorf patch({1, C, win.d, win.h, win.w});
  for (int64_t z0 : sz) {
    for (int64_t y0 : sy) {
      for (int64_t x0 : sx) {
        for (int64_t c = 0; c < C; ++c) {
          for (int64_t z = 0; z < win.d; ++z) {
            for (int64_t y = 0; y < win.h; ++y) {
              const float* src = padded.data() + ((c * s.d + z0 + z) * s.h + y0 + y) * s.w + x0;
              std::copy(src, src + win.w, patch.data() + ((c * win.d + z) * win.h + y) * win.w);
            }
          }
        }
        const Tensorf logits = predict(patch);
        if (logits.shape() != Shape{1, K, win.d, win.h, win.w}) {
          throw ShapeError("window predictor returned " + shape_str(logits.shape()));
        }
        for (int64_t z = 0; z < win.d; ++z) {
          for (int64_t y = 0; y < win.h; ++y) {
            for (int64_t x = 0; x < win.w; ++x) {
              const int64_t wi = (z * win.h + y) * win.w + x;
              const int64_t vi = ((z0 + z) * s.h + y0 + y) * s.w + x0 + x;
              const double wv = weight[static_cast<size_t>(wi)];
              norm[static_cast<size_t>(vi)] += wv;
              for (int64_t k = 0; k < K; ++k) {
                const float l = logits[k * win.voxels() + wi];
                const float p = 1.0f / (1.0f + std::exp(-l));
                acc[static_cast<size_t>(k * s.voxels() + vi)] += wv * static_cast<double>(p);
              }
            }
          }
        }
      }
    }
  }
  Tensorf out({K, orig.d, orig.h, orig.w});
  for (int64_t k = 0; k < K; ++k) {
    for (int64_t z = 0; z < orig.d; ++z) {
      for (int64_t y = 0; y < orig.h; ++y) {
        for (int64_t x = 0; x < orig.w; ++x) {
          const int64_t vi = ((z + lead[0]) * s.h + y + lead[1]) * s.w + x + lead[2];
          out[((k * orig.d + z) * orig.h + y) * orig.w + x] =
              static_cast<float>(acc[static_cast<size_t>(k * s.voxels() + vi)] / norm[static_cast<size_t>(vi)]);
        }
      }
    }
  }
  return out;
}

Tensorf sliding_window_infer(SegResNet& net, const Tensorf& image, const WindowSpec& window) {
  const int64_t div = net.spec().divisor();
  for (int a = 0; a < 3; ++a) {
    if (window.size[a] % div != 0) {
      throw ShapeError("window " + window.size.str() + " is not divisible by " + std::to_string(div));
    }
  }
  auto predict = [&](const Tensorf& x) { return std::move(net.forward(x, false).logits.front()); };
  return sliding_window_infer(predict, image, net.spec().out_channels, window);
}

}  // namespace autoseg
