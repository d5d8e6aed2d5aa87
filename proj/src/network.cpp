#include "autoseg/network.hpp"

#include <cmath>

#include "autoseg/config.hpp"
#include "autoseg/error.hpp"

namespace autoseg {

Conv3d::Conv3d(std::string name, int in_channels, int out_channels, int kernel, int stride, bool bias)
    : params_{kernel, stride, kernel / 2} {
  const Shape ws{out_channels, in_channels, kernel, kernel, kernel};
  weight_ = {name + ".weight", Tensorf(ws), Tensorf(ws)};
  if (bias) bias_ = Parameter{name + ".bias", Tensorf({out_channels}), Tensorf({out_channels})};
}

void Conv3d::init(Rng& rng) {
  const Shape& s = weight_.value.shape();
  const double fan_in = static_cast<double>(s[1] * s[2] * s[3] * s[4]);
  const double bound = 1.0 / std::sqrt(fan_in);
  std::uniform_real_distribution<double> uniform(-bound, bound);
  for (auto& w : weight_.value.span()) w = static_cast<float>(uniform(rng));
  if (bias_) bias_->value.fill(0.0f);
}

Tensorf Conv3d::forward(const Tensorf& x, bool cache) {
  Tensorf y;
  kernels::conv3d_forward(x, weight_.value, bias_ ? &bias_->value : nullptr, params_, y);
  if (cache) input_ = x;
  return y;
}

Tensorf Conv3d::backward(const Tensorf& dy, bool need_dx) {
  if (input_.empty()) throw Error(weight_.name + ": backward without a cached forward");
  Tensorf dx;
  kernels::conv3d_backward(input_, weight_.value, dy, params_, need_dx ? &dx : nullptr, weight_.grad,
                           bias_ ? &bias_->grad : nullptr);
  return dx;
}

void Conv3d::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  if (bias_) out.push_back(&*bias_);
}

BatchNorm3d::BatchNorm3d(std::string name, int channels)
    : name_(std::move(name)),
      gamma_{name_ + ".gamma", Tensorf({channels}, 1.0f), Tensorf({channels})},
      beta_{name_ + ".beta", Tensorf({channels}, 0.0f), Tensorf({channels})},
      running_mean_(static_cast<size_t>(channels), 0.0f),
      running_var_(static_cast<size_t>(channels), 1.0f) {}

Tensorf BatchNorm3d::forward(const Tensorf& x, bool train, bool cache) {
  Tensorf y;
  kernels::batchnorm_forward(x, gamma_.value, beta_.value, running_mean_, running_var_, train, momentum_, eps_, y,
                             cache ? &cache_ : nullptr);
  return y;
}

Tensorf BatchNorm3d::backward(const Tensorf& dy) {
  Tensorf dx;
  kernels::batchnorm_backward(dy, gamma_.value, cache_, dx, gamma_.grad, beta_.grad);
  return dx;
}

void BatchNorm3d::collect(std::vector<Parameter*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

void BatchNorm3d::collect(std::vector<Buffer>& out) {
  out.push_back({name_ + ".running_mean", &running_mean_});
  out.push_back({name_ + ".running_var", &running_var_});
}

ResBlock::ResBlock(const std::string& name, int channels)
    : bn1_(name + ".bn1", channels),
      conv1_(name + ".conv1", channels, channels, 3, 1, false),
      bn2_(name + ".bn2", channels),
      conv2_(name + ".conv2", channels, channels, 3, 1, false) {}

void ResBlock::init(Rng& rng) {
  conv1_.init(rng);
  conv2_.init(rng);
}

Tensorf ResBlock::forward(const Tensorf& x, bool train, bool cache) {
  Tensorf a = bn1_.forward(x, train, cache);
  Tensorf r;
  kernels::relu_forward(a, r);
  Tensorf c = conv1_.forward(r, cache);
  Tensorf d = bn2_.forward(c, train, cache);
  kernels::relu_forward(d, r);
  Tensorf y = conv2_.forward(r, cache);
  kernels::add_inplace(y, x);
  if (cache) {
    pre1_ = std::move(a);
    pre2_ = std::move(d);
  }
  return y;
}

Tensorf ResBlock::backward(const Tensorf& dy) {
  Tensorf g = conv2_.backward(dy);
  Tensorf t;
  kernels::relu_backward(pre2_, g, t);
  g = conv1_.backward(bn2_.backward(t));
  kernels::relu_backward(pre1_, g, t);
  Tensorf dx = bn1_.backward(t);
  kernels::add_inplace(dx, dy);
  return dx;
}

void ResBlock::collect(std::vector<Parameter*>& out) {
  bn1_.collect(out);
  conv1_.collect(out);
  bn2_.collect(out);
  conv2_.collect(out);
}

void ResBlock::collect(std::vector<Buffer>& out) {
  bn1_.collect(out);
  bn2_.collect(out);
}

void NetworkSpec::validate() const {
  if (in_channels < 1 || out_channels < 1) throw ValidationError("network needs at least one input and output channel");
  if (init_filters < 1) throw ValidationError("init_filters must be >= 1");
  if (num_levels < 1 || num_levels > 8) throw ValidationError("num_levels must lie in [1, 8]");
  if (static_cast<int>(blocks_down.size()) != num_levels) throw ValidationError("blocks_down needs num_levels entries");
  if (static_cast<int>(blocks_up.size()) != num_levels - 1) {
    throw ValidationError("blocks_up needs num_levels - 1 entries");
  }
  for (int b : blocks_down) {
    if (b < 0) throw ValidationError("negative block count");
  }
  for (int b : blocks_up) {
    if (b < 0) throw ValidationError("negative block count");
  }
  if (deep_supervision_levels < 0 || deep_supervision_levels > num_levels - 1) {
    throw ValidationError("deep_supervision_levels must lie in [0, num_levels - 1]");
  }
}

nlohmann::json NetworkSpec::to_json() const {
  return {{"in_channels", in_channels},   {"out_channels", out_channels}, {"init_filters", init_filters},
          {"num_levels", num_levels},     {"blocks_down", blocks_down},   {"blocks_up", blocks_up},
          {"deep_supervision_levels", deep_supervision_levels}};
}

NetworkSpec NetworkSpec::from_json(const nlohmann::json& j) {
  NetworkSpec s;
  s.in_channels = j.at("in_channels").get<int>();
  s.out_channels = j.at("out_channels").get<int>();
  s.init_filters = j.at("init_filters").get<int>();
  s.num_levels = j.at("num_levels").get<int>();
  s.blocks_down = j.at("blocks_down").get<std::vector<int>>();
  s.blocks_up = j.at("blocks_up").get<std::vector<int>>();
  s.deep_supervision_levels = j.at("deep_supervision_levels").get<int>();
  s.validate();
  return s;
}

NetworkSpec NetworkSpec::from_config(const SegConfig& cfg) {
  NetworkSpec s;
  s.in_channels = cfg.in_channels;
  s.out_channels = static_cast<int>(cfg.subregions.size());
  s.init_filters = cfg.init_filters;
  s.num_levels = cfg.num_levels;
  s.blocks_down = cfg.blocks_down;
  s.blocks_up = cfg.blocks_up;
  s.deep_supervision_levels = cfg.deep_supervision_levels;
  s.validate();
  return s;
}

SegResNet::SegResNet(NetworkSpec spec, uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  const int levels = spec_.num_levels;
  conv_init_ = Conv3d("conv_init", spec_.in_channels, spec_.filters(0), 3, 1, false);
  for (int i = 0; i < levels; ++i) {
    if (i > 0) {
      down_.emplace_back("down." + std::to_string(i), spec_.filters(i - 1), spec_.filters(i), 3, 2, false);
    }
    enc_.emplace_back();
    for (int b = 0; b < spec_.blocks_down[static_cast<size_t>(i)]; ++b) {
      enc_.back().emplace_back("enc." + std::to_string(i) + "." + std::to_string(b), spec_.filters(i));
    }
  }
  for (int j = 0; j < levels - 1; ++j) {
    up_conv_.emplace_back("up." + std::to_string(j), spec_.filters(j + 1), spec_.filters(j), 1, 1, false);
    dec_.emplace_back();
    for (int b = 0; b < spec_.blocks_up[static_cast<size_t>(j)]; ++b) {
      dec_.back().emplace_back("dec." + std::to_string(j) + "." + std::to_string(b), spec_.filters(j));
    }
  }
  for (int i = 0; i <= spec_.deep_supervision_levels; ++i) {
    heads_.emplace_back("head." + std::to_string(i), spec_.filters(i), spec_.out_channels, 1, 1, true);
  }

  Rng rng(seed);
  conv_init_.init(rng);
  for (int i = 0; i < levels; ++i) {
    if (i > 0) down_[static_cast<size_t>(i - 1)].init(rng);
    for (auto& blk : enc_[static_cast<size_t>(i)]) blk.init(rng);
  }
  for (int j = 0; j < levels - 1; ++j) {
    up_conv_[static_cast<size_t>(j)].init(rng);
    for (auto& blk : dec_[static_cast<size_t>(j)]) blk.init(rng);
  }
  for (auto& h : heads_) h.init(rng);
}

NetworkOutput SegResNet::forward(const Tensorf& x, bool train) {
  if (x.rank() != 5) throw ShapeError("network input must be B x C x D x H x W, got " + shape_str(x.shape()));
  if (x.dim(1) != spec_.in_channels) {
    throw ShapeError("network expects " + std::to_string(spec_.in_channels) + " input channels, got " +
                     std::to_string(x.dim(1)));
  }
  static const char* axis_names[3] = {"D", "H", "W"};
  for (int a = 0; a < 3; ++a) {
    if (x.dim(2 + a) % spec_.divisor() != 0) {
      throw ShapeError(std::string("input axis ") + axis_names[a] + "=" + std::to_string(x.dim(2 + a)) +
                       " is not divisible by " + std::to_string(spec_.divisor()));
    }
  }
  const bool cache = train;
  const int levels = spec_.num_levels;
  const int ds = spec_.deep_supervision_levels;
  NetworkOutput out;
  out.logits.resize(static_cast<size_t>(ds + 1));

  std::vector<Tensorf> skips(static_cast<size_t>(levels));
  Tensorf h = conv_init_.forward(x, cache);
  for (int i = 0; i < levels; ++i) {
    if (i > 0) h = down_[static_cast<size_t>(i - 1)].forward(h, cache);
    for (auto& blk : enc_[static_cast<size_t>(i)]) h = blk.forward(h, train, cache);
    if (i < levels - 1) skips[static_cast<size_t>(i)] = h;
  }
  if (levels - 1 <= ds) out.logits[static_cast<size_t>(levels - 1)] = heads_[static_cast<size_t>(levels - 1)].forward(h, cache);
  for (int j = levels - 2; j >= 0; --j) {
    Tensorf u;
    kernels::upsample2x_forward(up_conv_[static_cast<size_t>(j)].forward(h, cache), u);
    kernels::add_inplace(u, skips[static_cast<size_t>(j)]);
    skips[static_cast<size_t>(j)] = Tensorf();
    for (auto& blk : dec_[static_cast<size_t>(j)]) u = blk.forward(u, train, cache);
    if (j <= ds) out.logits[static_cast<size_t>(j)] = heads_[static_cast<size_t>(j)].forward(u, cache);
    h = std::move(u);
  }
  cached_ = cache;
  return out;
}

Tensorf SegResNet::backward(const std::vector<Tensorf>& dlogits) {
  if (!cached_) throw Error("SegResNet::backward requires a preceding train-mode forward");
  const int levels = spec_.num_levels;
  const int ds = spec_.deep_supervision_levels;
  if (static_cast<int>(dlogits.size()) != ds + 1) throw ShapeError("backward expects one gradient per logit level");

  auto head_grad = [&](int level) -> Tensorf {
    if (level > ds || dlogits[static_cast<size_t>(level)].empty()) return {};
    return heads_[static_cast<size_t>(level)].backward(dlogits[static_cast<size_t>(level)]);
  };
  auto accumulate = [](Tensorf& dst, const Tensorf& src) {
    if (src.empty()) return;
    if (dst.empty()) {
      dst = src;
    } else {
      kernels::add_inplace(dst, src);
    }
  };

  std::vector<Tensorf> dskip(static_cast<size_t>(levels));
  Tensorf g = head_grad(0);
  for (int j = 0; j < levels - 1; ++j) {
    if (g.empty()) throw Error("decoder level " + std::to_string(j) + " received no gradient");
    auto& blocks = dec_[static_cast<size_t>(j)];
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) g = it->backward(g);
    dskip[static_cast<size_t>(j)] = g;
    Tensorf gu;
    kernels::upsample2x_backward(g, gu);
    g = up_conv_[static_cast<size_t>(j)].backward(gu);
    accumulate(g, head_grad(j + 1));
  }
  for (int i = levels - 1; i >= 0; --i) {
    if (i < levels - 1) accumulate(g, dskip[static_cast<size_t>(i)]);
    auto& blocks = enc_[static_cast<size_t>(i)];
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) g = it->backward(g);
    if (i > 0) g = down_[static_cast<size_t>(i - 1)].backward(g);
  }
  return conv_init_.backward(g);
}

void SegResNet::zero_grad() {
  for (auto* p : parameters()) p->grad.fill(0.0f);
}

std::vector<Parameter*> SegResNet::parameters() {
  std::vector<Parameter*> out;
  conv_init_.collect(out);
  for (int i = 0; i < spec_.num_levels; ++i) {
    if (i > 0) down_[static_cast<size_t>(i - 1)].collect(out);
    for (auto& blk : enc_[static_cast<size_t>(i)]) blk.collect(out);
  }
  for (int j = 0; j < spec_.num_levels - 1; ++j) {
    up_conv_[static_cast<size_t>(j)].collect(out);
    for (auto& blk : dec_[static_cast<size_t>(j)]) blk.collect(out);
  }
  for (auto& h : heads_) h.collect(out);
  return out;
}

std::vector<Buffer> SegResNet::buffers() {
  std::vector<Buffer> out;
  for (auto& level : enc_) {
    for (auto& blk : level) blk.collect(out);
  }
  for (auto& level : dec_) {
    for (auto& blk : level) blk.collect(out);
  }
  return out;
}

int64_t SegResNet::parameter_count() {
  int64_t n = 0;
  for (auto* p : parameters()) n += p->value.numel();
  return n;
}

}  // namespace autoseg
