#include "autoseg/reference_kernels.hpp"

#include <cmath>

namespace autoseg::reference {

namespace {

int64_t idx5(const Shape& s, int64_t b, int64_t c, int64_t z, int64_t y, int64_t x) {
  return (((b * s[1] + c) * s[2] + z) * s[3] + y) * s[4] + x;
}

}  // namespace

template <typename T>
void conv3d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias, const ConvParams& p,
                    Tensor<T>& y) {
  const Shape& xs = x.shape();
  const int64_t co = weight.dim(0), ci = xs[1], k = p.kernel;
  const int64_t od = kernels::conv_out_extent(xs[2], p), oh = kernels::conv_out_extent(xs[3], p),
                ow = kernels::conv_out_extent(xs[4], p);
  y = Tensor<T>({xs[0], co, od, oh, ow});
  const Shape& ys = y.shape();
  for (int64_t b = 0; b < xs[0]; ++b)
    for (int64_t o = 0; o < co; ++o)
      for (int64_t z = 0; z < od; ++z)
        for (int64_t v = 0; v < oh; ++v)
          for (int64_t u = 0; u < ow; ++u) {
            double acc = bias ? static_cast<double>((*bias)[o]) : 0.0;
            for (int64_t c = 0; c < ci; ++c)
              for (int64_t kd = 0; kd < k; ++kd)
                for (int64_t kh = 0; kh < k; ++kh)
                  for (int64_t kw = 0; kw < k; ++kw) {
                    const int64_t iz = z * p.stride - p.pad + kd, iy = v * p.stride - p.pad + kh,
                                  ix = u * p.stride - p.pad + kw;
                    if (iz < 0 || iz >= xs[2] || iy < 0 || iy >= xs[3] || ix < 0 || ix >= xs[4]) continue;
                    acc += static_cast<double>(weight[(((o * ci + c) * k + kd) * k + kh) * k + kw]) *
                           x[idx5(xs, b, c, iz, iy, ix)];
                  }
            y[idx5(ys, b, o, z, v, u)] = static_cast<T>(acc);
          }
}

template <typename T>
void conv3d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy, const ConvParams& p,
                     Tensor<T>* dx, Tensor<T>& dweight, Tensor<T>* dbias) {
  const Shape& xs = x.shape();
  const Shape& ys = dy.shape();
  const int64_t co = weight.dim(0), ci = xs[1], k = p.kernel;
  if (dx) *dx = Tensor<T>(xs);
  for (int64_t b = 0; b < xs[0]; ++b)
    for (int64_t o = 0; o < co; ++o)
      for (int64_t z = 0; z < ys[2]; ++z)
        for (int64_t v = 0; v < ys[3]; ++v)
          for (int64_t u = 0; u < ys[4]; ++u) {
            const T g = dy[idx5(ys, b, o, z, v, u)];
            if (dbias) (*dbias)[o] += g;
            for (int64_t c = 0; c < ci; ++c)
              for (int64_t kd = 0; kd < k; ++kd)
                for (int64_t kh = 0; kh < k; ++kh)
                  for (int64_t kw = 0; kw < k; ++kw) {
                    const int64_t iz = z * p.stride - p.pad + kd, iy = v * p.stride - p.pad + kh,
                                  ix = u * p.stride - p.pad + kw;
                    if (iz < 0 || iz >= xs[2] || iy < 0 || iy >= xs[3] || ix < 0 || ix >= xs[4]) continue;
                    const int64_t wi = (((o * ci + c) * k + kd) * k + kh) * k + kw;
                    const int64_t xi = idx5(xs, b, c, iz, iy, ix);
                    dweight[wi] += g * x[xi];
                    if (dx) (*dx)[xi] += g * weight[wi];
                  }
          }
}

template <typename T>
void batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, std::vector<T>& running_mean,
                       std::vector<T>& running_var, bool train, T momentum, T eps, Tensor<T>& y,
                       BatchNormCache<T>* cache) {
  const Shape& s = x.shape();
  const int64_t vox = s[2] * s[3] * s[4];
  const int64_t n = s[0] * vox;
  y = Tensor<T>(s);
  if (cache) {
    cache->inv_std.assign(static_cast<size_t>(s[1]), T{0});
    cache->xhat = Tensor<T>(s);
  }
  for (int64_t c = 0; c < s[1]; ++c) {
    double mean = running_mean[c], var = running_var[c];
    if (train) {
      double sum = 0.0, sq = 0.0;
      for (int64_t b = 0; b < s[0]; ++b)
        for (int64_t i = 0; i < vox; ++i) sum += x[(b * s[1] + c) * vox + i];
      mean = sum / n;
      for (int64_t b = 0; b < s[0]; ++b)
        for (int64_t i = 0; i < vox; ++i) {
          const double dlt = x[(b * s[1] + c) * vox + i] - mean;
          sq += dlt * dlt;
        }
      var = sq / n;
      running_mean[c] = static_cast<T>((1 - momentum) * running_mean[c] + momentum * mean);
      running_var[c] = static_cast<T>((1 - momentum) * running_var[c] + momentum * (n > 1 ? sq / (n - 1) : var));
    }
    const double inv = 1.0 / std::sqrt(var + eps);
    if (cache) cache->inv_std[c] = static_cast<T>(inv);
    for (int64_t b = 0; b < s[0]; ++b)
      for (int64_t i = 0; i < vox; ++i) {
        const int64_t j = (b * s[1] + c) * vox + i;
        const double xh = (x[j] - mean) * inv;
        if (cache) cache->xhat[j] = static_cast<T>(xh);
        y[j] = static_cast<T>(gamma[c] * xh + beta[c]);
      }
  }
}

template <typename T>
void batchnorm_backward(const Tensor<T>& dy, const Tensor<T>& gamma, const BatchNormCache<T>& cache, Tensor<T>& dx,
                        Tensor<T>& dgamma, Tensor<T>& dbeta) {
  // Chain rule through mean and variance spelled out term by term.
  const Shape& s = dy.shape();
  const int64_t vox = s[2] * s[3] * s[4];
  const double n = static_cast<double>(s[0] * vox);
  dx = Tensor<T>(s);
  for (int64_t c = 0; c < s[1]; ++c) {
    const double inv = cache.inv_std[c];
    double dvar = 0.0, dmean = 0.0, sum_xhat = 0.0;
    for (int64_t b = 0; b < s[0]; ++b)
      for (int64_t i = 0; i < vox; ++i) {
        const int64_t j = (b * s[1] + c) * vox + i;
        const double dxh = dy[j] * static_cast<double>(gamma[c]);
        dgamma[c] += static_cast<T>(dy[j] * cache.xhat[j]);
        dbeta[c] += dy[j];
        // x - mean = xhat / inv
        dvar += dxh * (cache.xhat[j] / inv) * -0.5 * inv * inv * inv;
        dmean += -dxh * inv;
        sum_xhat += cache.xhat[j] / inv;
      }
    dmean += dvar * -2.0 * sum_xhat / n;
    for (int64_t b = 0; b < s[0]; ++b)
      for (int64_t i = 0; i < vox; ++i) {
        const int64_t j = (b * s[1] + c) * vox + i;
        const double dxh = dy[j] * static_cast<double>(gamma[c]);
        dx[j] = static_cast<T>(dxh * inv + dvar * 2.0 * (cache.xhat[j] / inv) / n + dmean / n);
      }
  }
}

namespace {

// 1-D linear interpolation of one line to twice its length, half-pixel centres.
void upsample_line(const double* in, int64_t n, double* out) {
  for (int64_t o = 0; o < 2 * n; ++o) {
    double src = (o + 0.5) * 0.5 - 0.5;
    if (src < 0) src = 0;
    int64_t i0 = static_cast<int64_t>(std::floor(src));
    if (i0 > n - 1) i0 = n - 1;
    const int64_t i1 = i0 + 1 < n ? i0 + 1 : n - 1;
    const double f = src - i0;
    out[o] = in[i0] * (1 - f) + in[i1] * f;
  }
}

void upsample_line_adjoint(const double* g, int64_t n, double* out) {
  for (int64_t i = 0; i < n; ++i) out[i] = 0.0;
  for (int64_t o = 0; o < 2 * n; ++o) {
    double src = (o + 0.5) * 0.5 - 0.5;
    if (src < 0) src = 0;
    int64_t i0 = static_cast<int64_t>(std::floor(src));
    if (i0 > n - 1) i0 = n - 1;
    const int64_t i1 = i0 + 1 < n ? i0 + 1 : n - 1;
    const double f = src - i0;
    out[i0] += g[o] * (1 - f);
    out[i1] += g[o] * f;
  }
}

// Applies a line operator along one axis of a dense (z, y, x) block.
template <typename F>
std::vector<double> along_axis(const std::vector<double>& in, int64_t d, int64_t h, int64_t w, int axis, int64_t outn,
                               F&& op) {
  const int64_t dims[3] = {d, h, w};
  int64_t od[3] = {d, h, w};
  od[axis] = outn;
  std::vector<double> out(static_cast<size_t>(od[0] * od[1] * od[2]));
  std::vector<double> line(static_cast<size_t>(dims[axis])), res(static_cast<size_t>(outn));
  const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
  for (int64_t i = 0; i < dims[a1]; ++i)
    for (int64_t j = 0; j < dims[a2]; ++j) {
      int64_t pos[3];
      pos[a1] = i;
      pos[a2] = j;
      for (int64_t t = 0; t < dims[axis]; ++t) {
        pos[axis] = t;
        line[static_cast<size_t>(t)] = in[static_cast<size_t>((pos[0] * dims[1] + pos[1]) * dims[2] + pos[2])];
      }
      op(line.data(), dims[axis], res.data());
      for (int64_t t = 0; t < outn; ++t) {
        pos[axis] = t;
        out[static_cast<size_t>((pos[0] * od[1] + pos[1]) * od[2] + pos[2])] = res[static_cast<size_t>(t)];
      }
    }
  return out;
}

}  // namespace

template <typename T>
void upsample2x_forward(const Tensor<T>& x, Tensor<T>& y) {
  const Shape& s = x.shape();
  const int64_t d = s[2], h = s[3], w = s[4], vox = d * h * w;
  y = Tensor<T>({s[0], s[1], 2 * d, 2 * h, 2 * w});
  for (int64_t c = 0; c < s[0] * s[1]; ++c) {
    std::vector<double> v(x.data() + c * vox, x.data() + (c + 1) * vox);
    v = along_axis(v, d, h, w, 2, 2 * w, upsample_line);
    v = along_axis(v, d, h, 2 * w, 1, 2 * h, upsample_line);
    v = along_axis(v, d, 2 * h, 2 * w, 0, 2 * d, upsample_line);
    for (size_t i = 0; i < v.size(); ++i) y[c * 8 * vox + static_cast<int64_t>(i)] = static_cast<T>(v[i]);
  }
}

template <typename T>
void upsample2x_backward(const Tensor<T>& dy, Tensor<T>& dx) {
  const Shape& s = dy.shape();
  const int64_t d = s[2] / 2, h = s[3] / 2, w = s[4] / 2, vox = d * h * w;
  dx = Tensor<T>({s[0], s[1], d, h, w});
  for (int64_t c = 0; c < s[0] * s[1]; ++c) {
    std::vector<double> v(dy.data() + c * 8 * vox, dy.data() + (c + 1) * 8 * vox);
    auto adj = [](const double* g, int64_t n2, double* o) { upsample_line_adjoint(g, n2 / 2, o); };
    v = along_axis(v, 2 * d, 2 * h, 2 * w, 0, d, adj);
    v = along_axis(v, d, 2 * h, 2 * w, 1, h, adj);
    v = along_axis(v, d, h, 2 * w, 2, w, adj);
    for (size_t i = 0; i < v.size(); ++i) dx[c * vox + static_cast<int64_t>(i)] = static_cast<T>(v[i]);
  }
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
  template void upsample2x_forward(const Tensor<T>&, Tensor<T>&);                                                \
  template void upsample2x_backward(const Tensor<T>&, Tensor<T>&);

AUTOSEG_INSTANTIATE(float)
AUTOSEG_INSTANTIATE(double)
#undef AUTOSEG_INSTANTIATE

}  // namespace autoseg::reference
