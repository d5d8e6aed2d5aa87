#pragma once

// Straightforward serial loops; kept as the test oracle for kernels.hpp.

#include "autoseg/kernels.hpp"

namespace autoseg::reference {

using kernels::BatchNormCache;
using kernels::ConvParams;

template <typename T>
void conv3d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias, const ConvParams& p,
                    Tensor<T>& y);

template <typename T>
void conv3d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy, const ConvParams& p,
                     Tensor<T>* dx, Tensor<T>& dweight, Tensor<T>* dbias);

template <typename T>
void batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, std::vector<T>& running_mean,
                       std::vector<T>& running_var, bool train, T momentum, T eps, Tensor<T>& y,
                       BatchNormCache<T>* cache);

template <typename T>
void batchnorm_backward(const Tensor<T>& dy, const Tensor<T>& gamma, const BatchNormCache<T>& cache, Tensor<T>& dx,
                        Tensor<T>& dgamma, Tensor<T>& dbeta);

// Separable: interpolates along w, then h, then d.
template <typename T>
void upsample2x_forward(const Tensor<T>& x, Tensor<T>& y);
template <typename T>
void upsample2x_backward(const Tensor<T>& dy, Tensor<T>& dx);

}  // namespace autoseg::reference
