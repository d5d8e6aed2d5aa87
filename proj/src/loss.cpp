#include "autoseg/loss.hpp"

#include <cmath>

#include "autoseg/error.hpp"

namespace autoseg {

namespace {

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

ClassMask full_class_mask(int64_t batch, int64_t classes) { return ClassMask({batch, classes}, 1); }

std::vector<double> deep_supervision_weights(int levels) {
  if (levels < 1) throw ValidationError("deep supervision needs at least one level");
  std::vector<double> w(static_cast<size_t>(levels));
  for (int i = 0; i < levels; ++i) w[static_cast<size_t>(i)] = std::ldexp(1.0, -i);
  return w;
}

Mask downsample_nearest(const Mask& target, const Shape3& out) {
  if (target.rank() != 5) throw ShapeError("target must be B x K x D x H x W, got " + shape_str(target.shape()));
  const Shape3 in = target.spatial();
  if (out == in) return target;
  static const char* axis_names[3] = {"D", "H", "W"};
  for (int a = 0; a < 3; ++a) {
    if (out[a] <= 0 || in[a] % out[a] != 0) {
      throw ShapeError(std::string("target axis ") + axis_names[a] + "=" + std::to_string(in[a]) +
                       " is not an integer multiple of " + std::to_string(out[a]));
    }
  }
  const int64_t bk = target.dim(0) * target.dim(1);
  Mask res({target.dim(0), target.dim(1), out.d, out.h, out.w});
  for (int64_t c = 0; c < bk; ++c) {
    const uint8_t* src = target.data() + c * in.voxels();
    uint8_t* dst = res.data() + c * out.voxels();
    for (int64_t z = 0; z < out.d; ++z) {
      const int64_t sz = z * in.d / out.d;
      for (int64_t y = 0; y < out.h; ++y) {
        const int64_t sy = y * in.h / out.h;
        for (int64_t x = 0; x < out.w; ++x) {
          dst[(z * out.h + y) * out.w + x] = src[(sz * in.h + sy) * in.w + x * in.w / out.w];
        }
      }
    }
  }
  return res;
}

template <typename T>
double dice_focal_loss(const Tensor<T>& logits, const Mask& target, const ClassMask& class_mask,
                       const LossSettings& settings, Tensor<T>* grad) {
  if (logits.rank() != 5) throw ShapeError("logits must be B x K x D x H x W, got " + shape_str(logits.shape()));
  if (target.shape() != logits.shape()) {
    throw ShapeError("target shape " + shape_str(target.shape()) + " does not match logits " +
                     shape_str(logits.shape()));
  }
  const int64_t B = logits.dim(0);
  const int64_t K = logits.dim(1);
  if (class_mask.shape() != Shape{B, K}) {
    throw ShapeError("class mask must be " + shape_str({B, K}) + ", got " + shape_str(class_mask.shape()));
  }
  int64_t active = 0;
  for (int64_t i = 0; i < B * K; ++i) active += class_mask[i] != 0;
  if (active == 0) throw ValidationError("loss called with every class masked out");

  const int64_t n = logits.spatial().voxels();
  const double s = settings.dice_smooth;
  const double gamma = settings.focal_gamma;
  const double inv_active = 1.0 / static_cast<double>(active);
  const double inv_n = 1.0 / static_cast<double>(n);
  if (grad) {
    if (grad->shape() != logits.shape()) *grad = Tensor<T>(logits.shape());
    grad->fill(T(0));
  }

  std::vector<double> terms(static_cast<size_t>(B * K), 0.0);
#pragma omp parallel for schedule(static)
  for (int64_t bk = 0; bk < B * K; ++bk) {
    if (!class_mask[bk]) continue;
    const T* z = logits.data() + bk * n;
    const uint8_t* t = target.data() + bk * n;
    double inter = 0.0, psq = 0.0, tsum = 0.0, focal = 0.0;
    for (int64_t v = 0; v < n; ++v) {
      const double zv = static_cast<double>(z[v]);
      const double p = sigmoid(zv);
      const double tv = t[v] ? 1.0 : 0.0;
      inter += p * tv;
      psq += p * p;
      tsum += tv;
      // -log p = softplus(-z), -log(1 - p) = softplus(z)
      focal += t[v] ? std::pow(1.0 - p, gamma) * softplus(-zv) : std::pow(p, gamma) * softplus(zv);
    }
    const double num = 2.0 * inter + s;
    const double den = psq + tsum + s;
    terms[static_cast<size_t>(bk)] = (1.0 - num / den) + focal * inv_n;
    if (!grad) continue;
    T* g = grad->data() + bk * n;
    const double den2 = den * den;
    for (int64_t v = 0; v < n; ++v) {
      const double zv = static_cast<double>(z[v]);
      const double p = sigmoid(zv);
      const double q = 1.0 - p;
      const double tv = t[v] ? 1.0 : 0.0;
      const double ddice_dp = -(2.0 * tv * den - num * 2.0 * p) / den2;
      double dfocal;
      if (t[v]) {
        dfocal = -std::pow(q, gamma) * (gamma * p * softplus(-zv) + q);
      } else {
        dfocal = std::pow(p, gamma) * (gamma * q * softplus(zv) + p);
      }
      g[v] = static_cast<T>((ddice_dp * p * q + dfocal * inv_n) * inv_active);
    }
  }
  double total = 0.0;
  for (int64_t bk = 0; bk < B * K; ++bk) total += terms[static_cast<size_t>(bk)];
  return total * inv_active;
}

template double dice_focal_loss<float>(const Tensor<float>&, const Mask&, const ClassMask&, const LossSettings&,
                                       Tensor<float>*);
template double dice_focal_loss<double>(const Tensor<double>&, const Mask&, const ClassMask&, const LossSettings&,
                                        Tensor<double>*);

template <typename T>
DeepSupervisionResult<T> deep_supervision_loss(const std::vector<Tensor<T>>& logits, const Mask& target,
                                               const ClassMask& class_mask, const LossSettings& settings,
                                               bool want_grads) {
  if (logits.empty()) throw ValidationError("deep supervision loss needs at least one logit level");
  const auto weights = deep_supervision_weights(static_cast<int>(logits.size()));
  DeepSupervisionResult<T> out;
  out.level_losses.resize(logits.size());
  if (want_grads) out.grads.resize(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) {
    const Mask t = downsample_nearest(target, logits[i].spatial());
    Tensor<T>* g = want_grads ? &out.grads[i] : nullptr;
    const double l = dice_focal_loss(logits[i], t, class_mask, settings, g);
    out.level_losses[i] = l;
    out.total += weights[i] * l;
    if (g) {
      const T w = static_cast<T>(weights[i]);
      for (auto& v : g->span()) v *= w;
    }
  }
  return out;
}

template DeepSupervisionResult<float> deep_supervision_loss(const std::vector<Tensor<float>>&, const Mask&,
                                                            const ClassMask&, const LossSettings&, bool);
template DeepSupervisionResult<double> deep_supervision_loss(const std::vector<Tensor<double>>&, const Mask&,
                                                             const ClassMask&, const LossSettings&, bool);

}  // namespace autoseg
