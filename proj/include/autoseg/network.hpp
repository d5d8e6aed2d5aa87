#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "autoseg/layers.hpp"

namespace autoseg {

struct SegConfig;

struct NetworkSpec {
  int in_channels = 4;
  int out_channels = 3;
  int init_filters = 8;
  int num_levels = 5;
  std::vector<int> blocks_down{1, 2, 2, 4, 4};
  std::vector<int> blocks_up{1, 1, 1, 1};
  int deep_supervision_levels = 4;

  int filters(int level) const { return init_filters << level; }
  int64_t divisor() const { return int64_t{1} << (num_levels - 1); }
  void validate() const;  // ValidationError
  nlohmann::json to_json() const;
  static NetworkSpec from_json(const nlohmann::json& j);
  static NetworkSpec from_config(const SegConfig& cfg);
  bool operator==(const NetworkSpec&) const = default;
};

// logits[i] has shape B x K x D/2^i x H/2^i x W/2^i, i = 0..deep_supervision_levels.
struct NetworkOutput {
  std::vector<Tensorf> logits;
};

// Encoder-decoder with residual blocks, batch norm, and a 1x1x1 logit head per
// supervised decoder level (the coarsest head reads the bottleneck).
class SegResNet {
 public:
  explicit SegResNet(NetworkSpec spec, uint64_t seed = 0);

  // x: B x C x D x H x W with D, H, W divisible by 2^(num_levels-1). Logits are raw.
  NetworkOutput forward(const Tensorf& x, bool train);
  // Gradients w.r.t. every returned logit level; accumulates parameter grads and
  // returns the input gradient. Requires a preceding train-mode forward.
  Tensorf backward(const std::vector<Tensorf>& dlogits);

  void zero_grad();
  std::vector<Parameter*> parameters();
  std::vector<Buffer> buffers();
  int64_t parameter_count();
  const NetworkSpec& spec() const { return spec_; }

 private:
  NetworkSpec spec_;
  Conv3d conv_init_;
  std::vector<Conv3d> down_;              // level i >= 1 uses down_[i-1]
  std::vector<std::vector<ResBlock>> enc_;
  std::vector<Conv3d> up_conv_;           // decoder level j reads level j+1
  std::vector<std::vector<ResBlock>> dec_;
  std::vector<Conv3d> heads_;
  bool cached_ = false;
};

}  // namespace autoseg
