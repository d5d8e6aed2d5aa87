#include "autoseg/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "autoseg/error.hpp"
#include "autoseg/rng.hpp"

namespace autoseg {

namespace {

// Sub-stream salts; each transform family draws from its own stream.
enum Stream : uint64_t { kAffine = 1, kFlip, kScale, kShift, kNoise, kBlur, kDropout, kCrop };

bool channel_is_zero(const float* x, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    if (x[i] != 0.0f) return false;
  }
  return true;
}

void check_prob(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(std::string("augmentation ") + what + " must lie in [0,1]");
}

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
    }
  }
  return c;
}

Mat3 rotation(int axis, double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  Mat3 r{};
  const int a = (axis + 1) % 3, b = (axis + 2) % 3;
  r[axis][axis] = 1.0;
  r[a][a] = c;
  r[a][b] = -s;
  r[b][a] = s;
  r[b][b] = c;
  return r;
}

// Output voxel o samples source inv * (o - centre) + centre.
void resample_affine(Tensorf& image, Mask& mask, const Mat3& inv) {
  const Shape3 s = image.spatial();
  const int64_t vox = s.voxels();
  const double cd = (s.d - 1) / 2.0, ch = (s.h - 1) / 2.0, cw = (s.w - 1) / 2.0;
  const int64_t nc = image.dim(0), nk = mask.empty() ? 0 : mask.dim(0);
  Tensorf out_img(image.shape(), 0.0f);
  Mask out_mask(mask.shape(), 0);
#pragma omp parallel for
  for (int64_t z = 0; z < s.d; ++z) {
    for (int64_t y = 0; y < s.h; ++y) {
      for (int64_t x = 0; x < s.w; ++x) {
        const double oz = z - cd, oy = y - ch, ox = x - cw;
        const double sz = inv[0][0] * oz + inv[0][1] * oy + inv[0][2] * ox + cd;
        const double sy = inv[1][0] * oz + inv[1][1] * oy + inv[1][2] * ox + ch;
        const double sx = inv[2][0] * oz + inv[2][1] * oy + inv[2][2] * ox + cw;
        const int64_t o = (z * s.h + y) * s.w + x;

        const int64_t nz = std::llround(sz), ny = std::llround(sy), nx = std::llround(sx);
        if (nz >= 0 && nz < s.d && ny >= 0 && ny < s.h && nx >= 0 && nx < s.w) {
          const int64_t src = (nz * s.h + ny) * s.w + nx;
          for (int64_t k = 0; k < nk; ++k) out_mask[k * vox + o] = mask[k * vox + src];
        }

        const int64_t z0 = static_cast<int64_t>(std::floor(sz)), y0 = static_cast<int64_t>(std::floor(sy)),
                      x0 = static_cast<int64_t>(std::floor(sx));
        const double fz = sz - z0, fy = sy - y0, fx = sx - x0;
        for (int dz = 0; dz < 2; ++dz) {
          const int64_t zz = z0 + dz;
          if (zz < 0 || zz >= s.d) continue;
          const double wz = dz ? fz : 1.0 - fz;
          for (int dy = 0; dy < 2; ++dy) {
            const int64_t yy = y0 + dy;
            if (yy < 0 || yy >= s.h) continue;
            const double wy = dy ? fy : 1.0 - fy;
            for (int dx = 0; dx < 2; ++dx) {
              const int64_t xx = x0 + dx;
              if (xx < 0 || xx >= s.w) continue;
              const double wgt = wz * wy * (dx ? fx : 1.0 - fx);
              const int64_t src = (zz * s.h + yy) * s.w + xx;
              for (int64_t c = 0; c < nc; ++c) out_img[c * vox + o] += static_cast<float>(wgt * image[c * vox + src]);
            }
          }
        }
      }
    }
  }
  image = std::move(out_img);
  mask = std::move(out_mask);
}

// Separable Gaussian smoothing with zero padding, in place on one channel.
void gaussian_blur(float* x, const Shape3& s, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= total;

  const int64_t dims[3] = {s.d, s.h, s.w};
  const int64_t strides[3] = {s.h * s.w, s.w, 1};
  std::vector<float> tmp(static_cast<size_t>(s.voxels()));
  for (int axis = 0; axis < 3; ++axis) {
    const int64_t n = dims[axis], st = strides[axis];
    for (int64_t i = 0; i < s.voxels(); ++i) {
      const int64_t pos = (i / st) % n;
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) {
        const int64_t q = pos + t;
        if (q < 0 || q >= n) continue;
        acc += k[t + radius] * x[i + t * st];
      }
      tmp[static_cast<size_t>(i)] = static_cast<float>(acc);
    }
    std::copy(tmp.begin(), tmp.end(), x);
  }
}

double foreground_std(const float* x, int64_t n) {
  double sum = 0.0, sq = 0.0;
  int64_t cnt = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (x[i] == 0.0f) continue;
    sum += x[i];
    sq += static_cast<double>(x[i]) * x[i];
    ++cnt;
  }
  if (cnt == 0) return 0.0;
  const double mean = sum / cnt;
  return std::sqrt(std::max(0.0, sq / cnt - mean * mean));
}

}  // namespace

void AugmentationPolicy::validate() const {
  check_prob(affine_prob, "affine_prob");
  for (double p : flip_prob) check_prob(p, "flip_prob");
  check_prob(intensity_scale_prob, "intensity_scale_prob");
  check_prob(intensity_shift_prob, "intensity_shift_prob");
  check_prob(noise_prob, "noise_prob");
  check_prob(blur_prob, "blur_prob");
  if (rotate_degrees < 0 || scale_range < 0 || scale_range >= 1 || intensity_scale_range < 0 ||
      intensity_shift_range < 0 || noise_std < 0) {
    throw ValidationError("augmentation ranges must be non-negative (scale_range < 1)");
  }
  if (!(blur_sigma_min > 0) || blur_sigma_max < blur_sigma_min) {
    throw ValidationError("augmentation blur sigma range must satisfy 0 < min <= max");
  }
  if (channel_dropout) {
    check_prob(channel_dropout->prob, "channel_dropout.prob");
    if (channel_dropout->channel < 0) throw ValidationError("channel_dropout.channel must be >= 0");
  }
}

AugmentationPolicy AugmentationPolicy::identity() {
  AugmentationPolicy p;
  p.affine_prob = 0.0;
  p.flip_prob = {0.0, 0.0, 0.0};
  p.intensity_scale_prob = 0.0;
  p.intensity_shift_prob = 0.0;
  p.noise_prob = 0.0;
  p.blur_prob = 0.0;
  return p;
}

void normalize_inplace(Tensorf& image) {
  const int64_t nc = image.dim(0);
  const int64_t vox = image.spatial().voxels();
#pragma omp parallel for
  for (int64_t c = 0; c < nc; ++c) {
    float* x = image.data() + c * vox;
    int64_t n = 0;
    double sum = 0.0;
    float lo = 0.0f, hi = 0.0f;
    for (int64_t i = 0; i < vox; ++i) {
      if (x[i] == 0.0f) continue;
      if (n == 0) lo = hi = x[i];
      lo = std::min(lo, x[i]);
      hi = std::max(hi, x[i]);
      sum += x[i];
      ++n;
    }
    if (n == 0 || lo == hi) {
      std::fill(x, x + vox, 0.0f);
      continue;
    }
    const double mean = sum / static_cast<double>(n);
    double m2 = 0.0;
    for (int64_t i = 0; i < vox; ++i) {
      if (x[i] != 0.0f) m2 += (x[i] - mean) * (x[i] - mean);
    }
    const double inv = 1.0 / std::sqrt(m2 / static_cast<double>(n));
    for (int64_t i = 0; i < vox; ++i) {
      if (x[i] != 0.0f) x[i] = static_cast<float>((x[i] - mean) * inv);
    }
  }
}

MultiChannelVolume normalize(const MultiChannelVolume& vol) {
  MultiChannelVolume out = vol;
  normalize_inplace(out.data);
  return out;
}

MultiLabelMask map_labels(const LabelVolume& lab, const SubregionSpec& spec) {
  const Shape3 s = lab.shape();
  const int64_t vox = s.voxels();
  const int64_t k = static_cast<int64_t>(spec.size());
  const std::set<int> alphabet = spec.label_alphabet();
  const int max_label = *alphabet.rbegin();
  // Lookup: label -> bit per channel; -1 marks labels outside the alphabet.
  std::vector<int64_t> bits(static_cast<size_t>(max_label) + 1, -1);
  for (int v : alphabet) {
    int64_t b = 0;
    for (int64_t c = 0; c < k; ++c) {
      if (spec.classes[static_cast<size_t>(c)].index.count(v)) b |= int64_t{1} << c;
    }
    bits[static_cast<size_t>(v)] = b;
  }
  for (int32_t v : lab.data.span()) {
    if (v < 0 || v > max_label || bits[static_cast<size_t>(v)] < 0) {
      throw ValidationError("label value " + std::to_string(v) + " is not covered by class_names");
    }
  }
  MultiLabelMask m;
  m.data = Mask({k, s.d, s.h, s.w}, 0);
  for (const auto& c : spec.classes) m.class_names.push_back(c.name);
  m.available.assign(static_cast<size_t>(k), 1);
#pragma omp parallel for
  for (int64_t i = 0; i < vox; ++i) {
    const int64_t b = bits[static_cast<size_t>(lab.data[i])];
    for (int64_t c = 0; c < k; ++c) m.data[c * vox + i] = static_cast<uint8_t>((b >> c) & 1);
  }
  return m;
}

template <typename T>
void flip_axis(Tensor<T>& t, int axis) {
  const Shape3 s = t.spatial();
  const int64_t nc = t.numel() / s.voxels();
  const int64_t dims[3] = {s.d, s.h, s.w};
  const int64_t strides[3] = {s.h * s.w, s.w, 1};
  const int64_t n = dims[axis], st = strides[axis];
  for (int64_t c = 0; c < nc; ++c) {
    T* base = t.data() + c * s.voxels();
    for (int64_t i = 0; i < s.voxels(); ++i) {
      const int64_t pos = (i / st) % n;
      if (pos < n / 2) std::swap(base[i], base[i + (n - 1 - 2 * pos) * st]);
    }
  }
}

bool channel_dropout_fires(const AugmentationPolicy& policy, uint64_t rng_seed) {
  if (!policy.channel_dropout) return false;
  Rng rng(derive_seed(rng_seed, kDropout));
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < policy.channel_dropout->prob;
}

void augment_inplace(Tensorf& image, Mask& mask, const AugmentationPolicy& policy, uint64_t seed) {
  policy.validate();
  const Shape3 s = image.spatial();
  if (!mask.empty() && !(mask.spatial() == s)) throw ShapeError("image and mask are not spatially aligned");
  const int64_t vox = s.voxels();
  const int64_t nc = image.dim(0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  {
    Rng rng(derive_seed(seed, kAffine));
    if (u01(rng) < policy.affine_prob) {
      const double r = policy.rotate_degrees * std::numbers::pi / 180.0;
      const double az = uniform(rng, -r, r), ay = uniform(rng, -r, r), ax = uniform(rng, -r, r);
      std::array<double, 3> zoom{};
      for (auto& z : zoom) z = uniform(rng, 1.0 - policy.scale_range, 1.0 + policy.scale_range);
      // Forward map A = R * S; the sampler needs A^-1 = S^-1 * R^T.
      const Mat3 rot = matmul(matmul(rotation(0, az), rotation(1, ay)), rotation(2, ax));
      Mat3 inv{};
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) inv[i][j] = rot[j][i] / zoom[i];
      }
      resample_affine(image, mask, inv);
    }
  }
  {
    Rng rng(derive_seed(seed, kFlip));
    for (int a = 0; a < 3; ++a) {
      if (u01(rng) < policy.flip_prob[a]) {
        flip_axis(image, a);
        if (!mask.empty()) flip_axis(mask, a);
      }
    }
  }

  std::vector<bool> absent(static_cast<size_t>(nc));
  for (int64_t c = 0; c < nc; ++c) absent[static_cast<size_t>(c)] = channel_is_zero(image.data() + c * vox, vox);

  {
    Rng rng(derive_seed(seed, kScale));
    if (u01(rng) < policy.intensity_scale_prob) {
      for (int64_t c = 0; c < nc; ++c) {
        const double f = 1.0 + uniform(rng, -policy.intensity_scale_range, policy.intensity_scale_range);
        if (absent[static_cast<size_t>(c)]) continue;
        float* x = image.data() + c * vox;
        for (int64_t i = 0; i < vox; ++i) x[i] = static_cast<float>(x[i] * f);
      }
    }
  }
  {
    Rng rng(derive_seed(seed, kShift));
    if (u01(rng) < policy.intensity_shift_prob) {
      for (int64_t c = 0; c < nc; ++c) {
        const double f = uniform(rng, -policy.intensity_shift_range, policy.intensity_shift_range);
        if (absent[static_cast<size_t>(c)]) continue;
        float* x = image.data() + c * vox;
        const double off = f * foreground_std(x, vox);
        for (int64_t i = 0; i < vox; ++i) x[i] = static_cast<float>(x[i] + off);
      }
    }
  }
  {
    Rng rng(derive_seed(seed, kNoise));
    if (u01(rng) < policy.noise_prob) {
      std::normal_distribution<float> noise(0.0f, static_cast<float>(policy.noise_std));
      for (int64_t c = 0; c < nc; ++c) {
        if (absent[static_cast<size_t>(c)]) continue;
        float* x = image.data() + c * vox;
        for (int64_t i = 0; i < vox; ++i) x[i] += noise(rng);
      }
    }
  }
  {
    Rng rng(derive_seed(seed, kBlur));
    if (u01(rng) < policy.blur_prob) {
      const double sigma = uniform(rng, policy.blur_sigma_min, policy.blur_sigma_max);
#pragma omp parallel for
      for (int64_t c = 0; c < nc; ++c) {
        if (!absent[static_cast<size_t>(c)]) gaussian_blur(image.data() + c * vox, s, sigma);
      }
    }
  }
  if (channel_dropout_fires(policy, seed)) {
    const int64_t c = policy.channel_dropout->channel;
    if (c >= nc) throw ValidationError("channel_dropout.channel " + std::to_string(c) + " out of range");
    std::fill(image.data() + c * vox, image.data() + (c + 1) * vox, 0.0f);
  }
}

std::pair<MultiChannelVolume, MultiLabelMask> apply_augmentation(const MultiChannelVolume& vol,
                                                                 const MultiLabelMask& mask,
                                                                 const AugmentationPolicy& policy, uint64_t rng_seed) {
  MultiChannelVolume v = vol;
  MultiLabelMask m = mask;
  augment_inplace(v.data, m.data, policy, rng_seed);
  return {std::move(v), std::move(m)};
}

template <typename T>
Tensor<T> pad_to(const Tensor<T>& t, const Shape3& target, std::array<int64_t, 3>* lead) {
  const Shape3 s = t.spatial();
  const Shape3 o{std::max(s.d, target.d), std::max(s.h, target.h), std::max(s.w, target.w)};
  const std::array<int64_t, 3> pre{(o.d - s.d) / 2, (o.h - s.h) / 2, (o.w - s.w) / 2};
  if (lead) *lead = pre;
  if (o == s) return t;
  Shape shape = t.shape();
  const size_t r = shape.size();
  shape[r - 3] = o.d;
  shape[r - 2] = o.h;
  shape[r - 1] = o.w;
  Tensor<T> out(shape, T{});
  const int64_t nc = t.numel() / s.voxels();
  for (int64_t c = 0; c < nc; ++c) {
    for (int64_t z = 0; z < s.d; ++z) {
      for (int64_t y = 0; y < s.h; ++y) {
        const T* src = t.data() + ((c * s.d + z) * s.h + y) * s.w;
        T* dst = out.data() + ((c * o.d + z + pre[0]) * o.h + y + pre[1]) * o.w + pre[2];
        std::copy(src, src + s.w, dst);
      }
    }
  }
  return out;
}

namespace {

template <typename T>
Tensor<T> extract(const Tensor<T>& t, const std::array<int64_t, 3>& start, const Shape3& p) {
  const Shape3 s = t.spatial();
  const int64_t nc = t.numel() / s.voxels();
  Shape shape = t.shape();
  const size_t r = shape.size();
  shape[r - 3] = p.d;
  shape[r - 2] = p.h;
  shape[r - 1] = p.w;
  Tensor<T> out(shape);
  for (int64_t c = 0; c < nc; ++c) {
    for (int64_t z = 0; z < p.d; ++z) {
      for (int64_t y = 0; y < p.h; ++y) {
        const T* src = t.data() + ((c * s.d + z + start[0]) * s.h + y + start[1]) * s.w + start[2];
        std::copy(src, src + p.w, out.data() + ((c * p.d + z) * p.h + y) * p.w);
      }
    }
  }
  return out;
}

}  // namespace

std::pair<Tensorf, Mask> crop_patch(const Tensorf& image, const Mask& mask, const Shape3& patch, uint64_t rng_seed,
                                    double fg_prob) {
  if (!(mask.spatial() == image.spatial())) throw ShapeError("image and mask are not spatially aligned");
  const Tensorf img = pad_to(image, patch);
  const Mask msk = pad_to(mask, patch);
  const Shape3 s = img.spatial();
  const int64_t vox = s.voxels();

  Rng rng(derive_seed(rng_seed, kCrop));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  int64_t centre = -1;
  if (u01(rng) < fg_prob) {
    std::vector<int64_t> fg;
    const int64_t nk = msk.dim(0);
    for (int64_t i = 0; i < vox; ++i) {
      for (int64_t k = 0; k < nk; ++k) {
        if (msk[k * vox + i]) {
          fg.push_back(i);
          break;
        }
      }
    }
    if (!fg.empty()) centre = fg[static_cast<size_t>(rng() % fg.size())];
  }
  if (centre < 0) centre = static_cast<int64_t>(rng() % static_cast<uint64_t>(vox));
  const int64_t cz = centre / (s.h * s.w), cy = (centre / s.w) % s.h, cx = centre % s.w;
  const std::array<int64_t, 3> start{std::clamp(cz - patch.d / 2, int64_t{0}, s.d - patch.d),
                                     std::clamp(cy - patch.h / 2, int64_t{0}, s.h - patch.h),
                                     std::clamp(cx - patch.w / 2, int64_t{0}, s.w - patch.w)};
  return {extract(img, start, patch), extract(msk, start, patch)};
}

std::pair<MultiChannelVolume, MultiLabelMask> crop_patch(const MultiChannelVolume& vol, const MultiLabelMask& mask,
                                                         const Shape3& patch, uint64_t rng_seed, double fg_prob) {
  auto [img, msk] = crop_patch(vol.data, mask.data, patch, rng_seed, fg_prob);
  MultiChannelVolume v{std::move(img), vol.spacing, vol.affine};
  MultiLabelMask m{std::move(msk), mask.class_names, mask.available};
  return {std::move(v), std::move(m)};
}

template Tensor<float> pad_to(const Tensor<float>&, const Shape3&, std::array<int64_t, 3>*);
template Tensor<double> pad_to(const Tensor<double>&, const Shape3&, std::array<int64_t, 3>*);
template Tensor<uint8_t> pad_to(const Tensor<uint8_t>&, const Shape3&, std::array<int64_t, 3>*);
template Tensor<int32_t> pad_to(const Tensor<int32_t>&, const Shape3&, std::array<int64_t, 3>*);
template void flip_axis(Tensor<float>&, int);
template void flip_axis(Tensor<uint8_t>&, int);
template void flip_axis(Tensor<int32_t>&, int);

}  // namespace autoseg
