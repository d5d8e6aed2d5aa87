#pragma once

#include <optional>
#include <string>
#include <vector>

#include "autoseg/kernels.hpp"
#include "autoseg/rng.hpp"
#include "autoseg/tensor.hpp"

namespace autoseg {

struct Parameter {
  std::string name;
  Tensorf value;
  Tensorf grad;
};

// A named non-trainable state vector (batch-norm running statistics).
struct Buffer {
  std::string name;
  std::vector<float>* values;
};

// Layers cache what backward needs only when forward is called with cache = true.
class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(std::string name, int in_channels, int out_channels, int kernel, int stride, bool bias);

  void init(Rng& rng);  // weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero bias
  Tensorf forward(const Tensorf& x, bool cache);
  Tensorf backward(const Tensorf& dy, bool need_dx = true);
  void collect(std::vector<Parameter*>& out);

 private:
  Parameter weight_;
  std::optional<Parameter> bias_;
  kernels::ConvParams params_;
  Tensorf input_;
};

class BatchNorm3d {
 public:
  BatchNorm3d() = default;
  BatchNorm3d(std::string name, int channels);

  Tensorf forward(const Tensorf& x, bool train, bool cache);
  Tensorf backward(const Tensorf& dy);
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<Buffer>& out);

 private:
  std::string name_;
  Parameter gamma_;
  Parameter beta_;
  std::vector<float> running_mean_;
  std::vector<float> running_var_;
  kernels::BatchNormCache<float> cache_;
  float momentum_ = 0.1f;
  float eps_ = 1e-5f;
};

// y = x + conv2(relu(bn2(conv1(relu(bn1(x))))))
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(const std::string& name, int channels);

  void init(Rng& rng);
  Tensorf forward(const Tensorf& x, bool train, bool cache);
  Tensorf backward(const Tensorf& dy);
  void collect(std::vector<Parameter*>& out);
  void collect(std::vector<Buffer>& out);

 private:
  BatchNorm3d bn1_;
  Conv3d conv1_;
  BatchNorm3d bn2_;
  Conv3d conv2_;
  Tensorf pre1_;
  Tensorf pre2_;
};

}  // namespace autoseg
