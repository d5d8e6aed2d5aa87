#pragma once

// Data-parallel NCDHW kernels used by the network. Serial reference versions with
// identical signatures live in reference_kernels.hpp and back the tests.

#include <vector>

#include "autoseg/tensor.hpp"

namespace autoseg::kernels {

struct ConvParams {
  int kernel = 3;
  int stride = 1;
  int pad = 1;
};

int64_t conv_out_extent(int64_t n, const ConvParams& p);

// x: B x Ci x D x H x W, weight: Co x Ci x k x k x k, bias: Co (optional).
// y is resized to B x Co x D' x H' x W'.
template <typename T>
void conv3d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias, const ConvParams& p,
                    Tensor<T>& y);

// Accumulates into dweight / dbias; overwrites *dx when given.
template <typename T>
void conv3d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy, const ConvParams& p,
                     Tensor<T>* dx, Tensor<T>& dweight, Tensor<T>* dbias);

template <typename T>
struct BatchNormCache {
  std::vector<T> inv_std;
  Tensor<T> xhat;
};

// Train mode normalizes with batch statistics over (B, D, H, W) and updates the
// running estimates (unbiased variance); eval mode uses the running estimates.
template <typename T>
void batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, std::vector<T>& running_mean,
                       std::vector<T>& running_var, bool train, T momentum, T eps, Tensor<T>& y,
                       BatchNormCache<T>* cache);

// Overwrites dx; accumulates into dgamma / dbeta.
template <typename T>
void batchnorm_backward(const Tensor<T>& dy, const Tensor<T>& gamma, const BatchNormCache<T>& cache, Tensor<T>& dx,
                        Tensor<T>& dgamma, Tensor<T>& dbeta);

template <typename T>
void relu_forward(const Tensor<T>& x, Tensor<T>& y);

// dx = dy where x > 0.
template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx);

// Trilinear x2 upsampling, half-pixel centres (align_corners = false).
template <typename T>
void upsample2x_forward(const Tensor<T>& x, Tensor<T>& y);
template <typename T>
void upsample2x_backward(const Tensor<T>& dy, Tensor<T>& dx);

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b);

}  // namespace autoseg::kernels
