#include "autoseg/kernels.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

namespace autoseg::kernels {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

struct Geometry {
  int64_t ci, d, h, w;     // input
  int64_t od, oh, ow;      // output
  int k, s, p;
  int64_t in_vox() const { return d * h * w; }
  int64_t out_vox() const { return od * oh * ow; }
  int64_t rows() const { return ci * k * k * k; }
  bool pointwise() const { return k == 1 && s == 1 && p == 0; }
};

template <typename T>
Geometry geometry(const Tensor<T>& x, const ConvParams& p) {
  if (x.rank() != 5) throw ShapeError("conv3d expects a B x C x D x H x W input, got " + shape_str(x.shape()));
  Geometry g{x.dim(1), x.dim(2), x.dim(3), x.dim(4), 0, 0, 0, p.kernel, p.stride, p.pad};
  g.od = conv_out_extent(g.d, p);
  g.oh = conv_out_extent(g.h, p);
  g.ow = conv_out_extent(g.w, p);
  return g;
}

// col[(c, kd, kh, kw), (od, oh, ow)] = x[c, od*s - p + kd, ...] with zero padding.
template <typename T>
void im2col(const T* x, const Geometry& g, T* col) {
  const int64_t k3 = int64_t{g.k} * g.k * g.k;
  const int64_t n = g.out_vox();
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < g.rows(); ++r) {
    const int64_t c = r / k3;
    const int kd = static_cast<int>((r / (g.k * g.k)) % g.k), kh = static_cast<int>((r / g.k) % g.k),
              kw = static_cast<int>(r % g.k);
    const T* xc = x + c * g.in_vox();
    T* out = col + r * n;
    for (int64_t od = 0; od < g.od; ++od) {
      const int64_t iz = od * g.s - g.p + kd;
      for (int64_t oh = 0; oh < g.oh; ++oh) {
        T* row = out + (od * g.oh + oh) * g.ow;
        const int64_t iy = oh * g.s - g.p + kh;
        if (iz < 0 || iz >= g.d || iy < 0 || iy >= g.h) {
          std::fill(row, row + g.ow, T{0});
          continue;
        }
        const T* src = xc + (iz * g.h + iy) * g.w;
        for (int64_t ow = 0; ow < g.ow; ++ow) {
          const int64_t ix = ow * g.s - g.p + kw;
          row[ow] = (ix >= 0 && ix < g.w) ? src[ix] : T{0};
        }
      }
    }
  }
}

// Adjoint of im2col; parallel over input channels so writes never collide.
template <typename T>
void col2im(const T* col, const Geometry& g, T* dx) {
  const int64_t k3 = int64_t{g.k} * g.k * g.k;
  const int64_t n = g.out_vox();
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < g.ci; ++c) {
    T* xc = dx + c * g.in_vox();
    std::fill(xc, xc + g.in_vox(), T{0});
    for (int64_t kk = 0; kk < k3; ++kk) {
      const int kd = static_cast<int>(kk / (g.k * g.k)), kh = static_cast<int>((kk / g.k) % g.k),
                kw = static_cast<int>(kk % g.k);
      const T* in = col + (c * k3 + kk) * n;
      for (int64_t od = 0; od < g.od; ++od) {
        const int64_t iz = od * g.s - g.p + kd;
        if (iz < 0 || iz >= g.d) continue;
        for (int64_t oh = 0; oh < g.oh; ++oh) {
          const int64_t iy = oh * g.s - g.p + kh;
          if (iy < 0 || iy >= g.h) continue;
          const T* row = in + (od * g.oh + oh) * g.ow;
          T* dst = xc + (iz * g.h + iy) * g.w;
          for (int64_t ow = 0; ow < g.ow; ++ow) {
            const int64_t ix = ow * g.s - g.p + kw;
            if (ix >= 0 && ix < g.w) dst[ix] += row[ow];
          }
        }
      }
    }
  }
}

template <typename T>
void check_weight(const Tensor<T>& weight, const Geometry& g) {
  if (weight.rank() != 5 || weight.dim(1) != g.ci || weight.dim(2) != g.k || weight.dim(3) != g.k ||
      weight.dim(4) != g.k) {
    throw ShapeError("conv3d weight " + shape_str(weight.shape()) + " does not match input channels " +
                     std::to_string(g.ci) + " and kernel " + std::to_string(g.k));
  }
}

}  // namespace

int64_t conv_out_extent(int64_t n, const ConvParams& p) {
  const int64_t out = (n + 2 * p.pad - p.kernel) / p.stride + 1;
  if (out < 1) throw ShapeError("convolution output extent is empty for input extent " + std::to_string(n));
  return out;
}

template <typename T>
void conv3d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias, const ConvParams& p,
                    Tensor<T>& y) {
  const Geometry g = geometry(x, p);
  check_weight(weight, g);
  const int64_t batch = x.dim(0), co = weight.dim(0), n = g.out_vox();
  y = Tensor<T>({batch, co, g.od, g.oh, g.ow});
  std::vector<T> col(g.pointwise() ? 0 : static_cast<size_t>(g.rows() * n));
  const ConstMapMat<T> wm(weight.data(), co, g.rows());
  for (int64_t b = 0; b < batch; ++b) {
    const T* xb = x.data() + b * g.ci * g.in_vox();
    const T* cp = xb;
    if (!g.pointwise()) {
      im2col(xb, g, col.data());
      cp = col.data();
    }
    MapMat<T> ym(y.data() + b * co * n, co, n);
    ym.noalias() = wm * ConstMapMat<T>(cp, g.rows(), n);
    if (bias) {
      for (int64_t c = 0; c < co; ++c) ym.row(c).array() += (*bias)[c];
    }
  }
}

template <typename T>
void conv3d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy, const ConvParams& p,
                     Tensor<T>* dx, Tensor<T>& dweight, Tensor<T>* dbias) {
  const Geometry g = geometry(x, p);
  check_weight(weight, g);
  const int64_t batch = x.dim(0), co = weight.dim(0), n = g.out_vox();
  if (dy.numel() != batch * co * n) throw ShapeError("conv3d_backward: dy has shape " + shape_str(dy.shape()));
  std::vector<T> col(g.pointwise() ? 0 : static_cast<size_t>(g.rows() * n));
  std::vector<T> dcol(g.pointwise() || !dx ? 0 : static_cast<size_t>(g.rows() * n));
  if (dx) *dx = Tensor<T>(x.shape());
  const ConstMapMat<T> wm(weight.data(), co, g.rows());
  MapMat<T> dwm(dweight.data(), co, g.rows());
  for (int64_t b = 0; b < batch; ++b) {
    const T* xb = x.data() + b * g.ci * g.in_vox();
    const T* cp = xb;
    if (!g.pointwise()) {
      im2col(xb, g, col.data());
      cp = col.data();
    }
    const ConstMapMat<T> dym(dy.data() + b * co * n, co, n);
    dwm.noalias() += dym * ConstMapMat<T>(cp, g.rows(), n).transpose();
    if (dbias) {
      // Plain loop: Eigen's vectorised sum depends on pointer alignment.
      for (int64_t c = 0; c < co; ++c) {
        const T* r = dy.data() + (b * co + c) * n;
        double acc = 0.0;
        for (int64_t i = 0; i < n; ++i) acc += r[i];
        (*dbias)[c] += static_cast<T>(acc);
      }
    }
    if (dx) {
      T* dxb = dx->data() + b * g.ci * g.in_vox();
      if (g.pointwise()) {
        MapMat<T>(dxb, g.rows(), n).noalias() = wm.transpose() * dym;
      } else {
        MapMat<T>(dcol.data(), g.rows(), n).noalias() = wm.transpose() * dym;
        col2im(dcol.data(), g, dxb);
      }
    }
  }
}

template <typename T>
void batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, std::vector<T>& running_mean,
                       std::vector<T>& running_var, bool train, T momentum, T eps, Tensor<T>& y,
                       BatchNormCache<T>* cache) {
  const int64_t batch = x.dim(0), nc = x.dim(1), vox = x.numel() / (batch * nc);
  const int64_t count = batch * vox;
  y = Tensor<T>(x.shape());
  if (cache) {
    cache->inv_std.assign(static_cast<size_t>(nc), T{0});
    cache->xhat = Tensor<T>(x.shape());
  }
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < nc; ++c) {
    double mean, var;
    if (train) {
      double sum = 0.0;
      for (int64_t b = 0; b < batch; ++b) {
        const T* xp = x.data() + (b * nc + c) * vox;
        for (int64_t i = 0; i < vox; ++i) sum += xp[i];
      }
      mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (int64_t b = 0; b < batch; ++b) {
        const T* xp = x.data() + (b * nc + c) * vox;
        for (int64_t i = 0; i < vox; ++i) sq += (xp[i] - mean) * (xp[i] - mean);
      }
      var = sq / static_cast<double>(count);
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      running_mean[c] = static_cast<T>((1.0 - momentum) * running_mean[c] + momentum * mean);
      running_var[c] = static_cast<T>((1.0 - momentum) * running_var[c] + momentum * unbiased);
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const double inv = 1.0 / std::sqrt(var + eps);
    const double gm = gamma[c], bt = beta[c];
    if (cache) cache->inv_std[c] = static_cast<T>(inv);
    for (int64_t b = 0; b < batch; ++b) {
      const T* xp = x.data() + (b * nc + c) * vox;
      T* yp = y.data() + (b * nc + c) * vox;
      T* hp = cache ? cache->xhat.data() + (b * nc + c) * vox : nullptr;
      for (int64_t i = 0; i < vox; ++i) {
        const T xh = static_cast<T>((xp[i] - mean) * inv);
        if (hp) hp[i] = xh;
        yp[i] = static_cast<T>(gm * xh + bt);
      }
    }
  }
}

template <typename T>
void batchnorm_backward(const Tensor<T>& dy, const Tensor<T>& gamma, const BatchNormCache<T>& cache, Tensor<T>& dx,
                        Tensor<T>& dgamma, Tensor<T>& dbeta) {
  const int64_t batch = dy.dim(0), nc = dy.dim(1), vox = dy.numel() / (batch * nc);
  const double count = static_cast<double>(batch * vox);
  dx = Tensor<T>(dy.shape());
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < nc; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int64_t b = 0; b < batch; ++b) {
      const T* g = dy.data() + (b * nc + c) * vox;
      const T* h = cache.xhat.data() + (b * nc + c) * vox;
      for (int64_t i = 0; i < vox; ++i) {
        sum_dy += g[i];
        sum_dy_xhat += static_cast<double>(g[i]) * h[i];
      }
    }
    dgamma[c] += static_cast<T>(sum_dy_xhat);
    dbeta[c] += static_cast<T>(sum_dy);
    const double scale = gamma[c] * static_cast<double>(cache.inv_std[c]) / count;
    for (int64_t b = 0; b < batch; ++b) {
      const T* g = dy.data() + (b * nc + c) * vox;
      const T* h = cache.xhat.data() + (b * nc + c) * vox;
      T* out = dx.data() + (b * nc + c) * vox;
      for (int64_t i = 0; i < vox; ++i) {
        out[i] = static_cast<T>(scale * (count * g[i] - sum_dy - h[i] * sum_dy_xhat));
      }
    }
  }
}

template <typename T>
void relu_forward(const Tensor<T>& x, Tensor<T>& y) {
  y = Tensor<T>(x.shape());
  const int64_t n = x.numel();
  const T* a = x.data();
  T* b = y.data();
#pragma omp parallel for simd schedule(static)
  for (int64_t i = 0; i < n; ++i) b[i] = a[i] > T{0} ? a[i] : T{0};
}

template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx) {
  dx = Tensor<T>(x.shape());
  const int64_t n = x.numel();
  const T* a = x.data();
  const T* g = dy.data();
  T* o = dx.data();
#pragma omp parallel for simd schedule(static)
  for (int64_t i = 0; i < n; ++i) o[i] = a[i] > T{0} ? g[i] : T{0};
}

namespace {

struct Tap {
  int64_t i0, i1;
  double frac;
};

std::vector<Tap> upsample_taps(int64_t n) {
  std::vector<Tap> taps(static_cast<size_t>(2 * n));
  for (int64_t o = 0; o < 2 * n; ++o) {
    const double src = std::max(0.0, (o + 0.5) / 2.0 - 0.5);
    const int64_t i0 = std::min(static_cast<int64_t>(src), n - 1);
    taps[static_cast<size_t>(o)] = {i0, std::min(i0 + 1, n - 1), src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

template <typename T>
void upsample2x_forward(const Tensor<T>& x, Tensor<T>& y) {
  const int64_t bc = x.dim(0) * x.dim(1), d = x.dim(2), h = x.dim(3), w = x.dim(4);
  y = Tensor<T>({x.dim(0), x.dim(1), 2 * d, 2 * h, 2 * w});
  const auto tz = upsample_taps(d), ty = upsample_taps(h), tx = upsample_taps(w);
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t c = 0; c < bc; ++c) {
    for (int64_t oz = 0; oz < 2 * d; ++oz) {
      const T* xc = x.data() + c * d * h * w;
      T* yc = y.data() + c * 8 * d * h * w;
      const Tap& az = tz[static_cast<size_t>(oz)];
      for (int64_t oy = 0; oy < 2 * h; ++oy) {
        const Tap& ay = ty[static_cast<size_t>(oy)];
        const T* r00 = xc + (az.i0 * h + ay.i0) * w;
        const T* r01 = xc + (az.i0 * h + ay.i1) * w;
        const T* r10 = xc + (az.i1 * h + ay.i0) * w;
        const T* r11 = xc + (az.i1 * h + ay.i1) * w;
        const double w00 = (1 - az.frac) * (1 - ay.frac), w01 = (1 - az.frac) * ay.frac, w10 = az.frac * (1 - ay.frac),
                     w11 = az.frac * ay.frac;
        T* out = yc + (oz * 2 * h + oy) * 2 * w;
        for (int64_t ox = 0; ox < 2 * w; ++ox) {
          const Tap& ax = tx[static_cast<size_t>(ox)];
          const double lo = w00 * r00[ax.i0] + w01 * r01[ax.i0] + w10 * r10[ax.i0] + w11 * r11[ax.i0];
          const double hi = w00 * r00[ax.i1] + w01 * r01[ax.i1] + w10 * r10[ax.i1] + w11 * r11[ax.i1];
          out[ox] = static_cast<T>((1 - ax.frac) * lo + ax.frac * hi);
        }
      }
    }
  }
}

template <typename T>
void upsample2x_backward(const Tensor<T>& dy, Tensor<T>& dx) {
  const int64_t d = dy.dim(2) / 2, h = dy.dim(3) / 2, w = dy.dim(4) / 2, bc = dy.dim(0) * dy.dim(1);
  dx = Tensor<T>({dy.dim(0), dy.dim(1), d, h, w});
  const auto tz = upsample_taps(d), ty = upsample_taps(h), tx = upsample_taps(w);
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < bc; ++c) {
    const T* g = dy.data() + c * 8 * d * h * w;
    std::vector<double> acc(static_cast<size_t>(d * h * w), 0.0);
    for (int64_t oz = 0; oz < 2 * d; ++oz) {
      const Tap& az = tz[static_cast<size_t>(oz)];
      for (int64_t oy = 0; oy < 2 * h; ++oy) {
        const Tap& ay = ty[static_cast<size_t>(oy)];
        const double wz[2] = {1 - az.frac, az.frac}, wy[2] = {1 - ay.frac, ay.frac};
        const int64_t iz[2] = {az.i0, az.i1}, iy[2] = {ay.i0, ay.i1};
        const T* row = g + (oz * 2 * h + oy) * 2 * w;
        for (int64_t ox = 0; ox < 2 * w; ++ox) {
          const Tap& ax = tx[static_cast<size_t>(ox)];
          const double v = row[ox];
          for (int a = 0; a < 2; ++a) {
            for (int b = 0; b < 2; ++b) {
              double* base = acc.data() + (iz[a] * h + iy[b]) * w;
              const double wab = wz[a] * wy[b] * v;
              base[ax.i0] += wab * (1 - ax.frac);
              base[ax.i1] += wab * ax.frac;
            }
          }
        }
      }
    }
    T* out = dx.data() + c * d * h * w;
    for (size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<T>(acc[i]);
  }
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int64_t n = a.numel();
  T* x = a.data();
  const T* y = b.data();
#pragma omp parallel for simd schedule(static)
  for (int64_t i = 0; i < n; ++i) x[i] += y[i];
}

#define AUTOSEG_INSTANTIATE(T)                                                                                    \
  template void conv3d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, const ConvParams&,          \
                               Tensor<T>&);                                                                       \
  template void conv3d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvParams&,         \
                                Tensor<T>*, Tensor<T>&, Tensor<T>*);                                              \
  template void batchnorm_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::vector<T>&,         \
                                  std::vector<T>&, bool, T, T, Tensor<T>&, BatchNormCache<T>*);                   \
  template void batchnorm_backward(const Tensor<T>&, const Tensor<T>&, const BatchNormCache<T>&, Tensor<T>&,     \
                                   Tensor<T>&, Tensor<T>&);                                                       \
  template void relu_forward(const Tensor<T>&, Tensor<T>&);                                                      \
  template void relu_backward(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);                                   \
  template void upsample2x_forward(const Tensor<T>&, Tensor<T>&);                                                \
  template void upsample2x_backward(const Tensor<T>&, Tensor<T>&);                                               \
  template void add_inplace(Tensor<T>&, const Tensor<T>&);

AUTOSEG_INSTANTIATE(float)
AUTOSEG_INSTANTIATE(double)
#undef AUTOSEG_INSTANTIATE

}  // namespace autoseg::kernels
