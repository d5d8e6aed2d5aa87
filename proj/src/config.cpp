#include "autoseg/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "autoseg/error.hpp"

namespace fs = std::filesystem;

namespace autoseg {

namespace {

const char* blending_name(Blending b) { return b == Blending::uniform ? "uniform" : "gaussian"; }

Blending blending_from(const std::string& s) {
  if (s == "uniform") return Blending::uniform;
  if (s == "gaussian") return Blending::gaussian;
  throw ValidationError("unknown blending '" + s + "' (expected uniform or gaussian)");
}

YAML::Node spec_to_yaml(const SubregionSpec& spec) {
  YAML::Node list(YAML::NodeType::Sequence);
  for (const auto& c : spec.classes) {
    YAML::Node n;
    n["name"] = c.name;
    YAML::Node idx(YAML::NodeType::Sequence);
    for (int v : c.index) idx.push_back(v);
    idx.SetStyle(YAML::EmitterStyle::Flow);
    n["index"] = idx;
    n.SetStyle(YAML::EmitterStyle::Flow);
    list.push_back(n);
  }
  return list;
}

SubregionSpec spec_from_yaml(const YAML::Node& list, bool sigmoid) {
  if (!list.IsSequence()) throw ValidationError("class_names must be a list of {name, index}");
  SubregionSpec spec;
  spec.sigmoid = sigmoid;
  for (const auto& n : list) {
    if (!n.IsMap() || !n["name"] || !n["index"]) throw ValidationError("class_names entries need 'name' and 'index'");
    SubregionClass c;
    c.name = n["name"].as<std::string>();
    if (n["index"].IsSequence()) {
      for (const auto& v : n["index"]) c.index.insert(v.as<int>());
    } else {
      c.index.insert(n["index"].as<int>());
    }
    spec.classes.push_back(std::move(c));
  }
  return spec;
}

template <typename T>
void read(const YAML::Node& n, const char* key, T& out) {
  if (n[key] && !n[key].IsNull()) out = n[key].as<T>();
}

AugmentationPolicy policy_from_yaml(const YAML::Node& n, AugmentationPolicy p) {
  read(n, "affine_prob", p.affine_prob);
  read(n, "rotate_degrees", p.rotate_degrees);
  read(n, "scale_range", p.scale_range);
  if (n["flip_prob"]) {
    if (n["flip_prob"].IsSequence()) {
      auto v = n["flip_prob"].as<std::vector<double>>();
      if (v.size() != 3) throw ValidationError("augmentation.flip_prob needs 3 entries");
      std::copy(v.begin(), v.end(), p.flip_prob.begin());
    } else {
      p.flip_prob.fill(n["flip_prob"].as<double>());
    }
  }
  read(n, "intensity_scale_prob", p.intensity_scale_prob);
  read(n, "intensity_scale_range", p.intensity_scale_range);
  read(n, "intensity_shift_prob", p.intensity_shift_prob);
  read(n, "intensity_shift_range", p.intensity_shift_range);
  read(n, "noise_prob", p.noise_prob);
  read(n, "noise_std", p.noise_std);
  read(n, "blur_prob", p.blur_prob);
  read(n, "blur_sigma_min", p.blur_sigma_min);
  read(n, "blur_sigma_max", p.blur_sigma_max);
  return p;
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "algorithm", "modality", "datalist", "dataroot", "class_names", "sigmoid", "in_channels", "patch_size",
      "init_filters", "num_levels", "blocks_down", "blocks_up", "deep_supervision_levels", "epochs",
      "learning_rate", "weight_decay", "batch_size_per_device", "adam_betas", "adam_eps", "validation_interval",
      "num_folds", "fold_seed", "seed", "network_seed", "foreground_crop_prob", "augmentation", "channel_dropout",
      "loss", "inference", "passthrough"};
  return keys;
}

}  // namespace

void SegConfig::validate() const {
  subregions.validate();
  if (algorithm != "segresnet") throw ValidationError("unsupported algorithm '" + algorithm + "'");
  if (in_channels < 1) throw ValidationError("in_channels must be >= 1");
  if (num_levels < 1) throw ValidationError("num_levels must be >= 1");
  if (init_filters < 1) throw ValidationError("init_filters must be >= 1");
  const int64_t div = int64_t{1} << (num_levels - 1);
  for (int a = 0; a < 3; ++a) {
    if (patch_size[a] < 1 || patch_size[a] % div != 0) {
      throw ValidationError("patch_size[" + std::to_string(a) + "]=" + std::to_string(patch_size[a]) +
                            " is not a positive multiple of 2^(num_levels-1)=" + std::to_string(div));
    }
  }
  if (static_cast<int>(blocks_down.size()) != num_levels) throw ValidationError("blocks_down needs num_levels entries");
  if (static_cast<int>(blocks_up.size()) != num_levels - 1) throw ValidationError("blocks_up needs num_levels-1 entries");
  if (deep_supervision_levels < 0 || deep_supervision_levels > num_levels - 1) {
    throw ValidationError("deep_supervision_levels must lie in [0, num_levels-1]");
  }
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (!(learning_rate > 0)) throw ValidationError("learning_rate must be positive");
  if (weight_decay < 0) throw ValidationError("weight_decay must be non-negative");
  if (batch_size_per_device < 1) throw ValidationError("batch_size_per_device must be >= 1");
  if (validation_interval < 1) throw ValidationError("validation_interval must be >= 1");
  if (num_folds < 1) throw ValidationError("num_folds must be >= 1");
  if (foreground_crop_prob < 0 || foreground_crop_prob > 1) throw ValidationError("foreground_crop_prob must lie in [0,1]");
  if (!(loss.dice_smooth > 0)) throw ValidationError("loss.dice_smooth must be positive");
  if (loss.focal_gamma < 0) throw ValidationError("loss.focal_gamma must be non-negative");
  if (!(inference.threshold > 0 && inference.threshold < 1)) throw ValidationError("inference.threshold must lie in (0,1)");
  if (inference.overlap < 0 || inference.overlap >= 1) throw ValidationError("inference.overlap must lie in [0,1)");
  augmentation.validate();
  if (augmentation.channel_dropout && augmentation.channel_dropout->channel >= in_channels) {
    throw ValidationError("channel_dropout.channel out of range");
  }
}

YAML::Node to_yaml(const SegConfig& c) {
  YAML::Node n;
  n["algorithm"] = c.algorithm;
  n["modality"] = c.modality;
  n["datalist"] = c.datalist;
  n["dataroot"] = c.dataroot;
  n["class_names"] = spec_to_yaml(c.subregions);
  n["sigmoid"] = c.subregions.sigmoid;
  n["in_channels"] = c.in_channels;
  auto flow = [](auto values) {
    YAML::Node s(YAML::NodeType::Sequence);
    for (auto v : values) s.push_back(v);
    s.SetStyle(YAML::EmitterStyle::Flow);
    return s;
  };
  n["patch_size"] = flow(c.patch_size);
  n["init_filters"] = c.init_filters;
  n["num_levels"] = c.num_levels;
  n["blocks_down"] = flow(c.blocks_down);
  n["blocks_up"] = flow(c.blocks_up);
  n["deep_supervision_levels"] = c.deep_supervision_levels;
  n["epochs"] = c.epochs;
  n["learning_rate"] = c.learning_rate;
  n["weight_decay"] = c.weight_decay;
  n["batch_size_per_device"] = c.batch_size_per_device;
  n["adam_betas"] = flow(std::vector<double>{c.adam_beta1, c.adam_beta2});
  n["adam_eps"] = c.adam_eps;
  n["validation_interval"] = c.validation_interval;
  n["num_folds"] = c.num_folds;
  n["fold_seed"] = c.fold_seed;
  n["seed"] = c.seed;
  n["network_seed"] = c.network_seed;
  n["foreground_crop_prob"] = c.foreground_crop_prob;

  const auto& a = c.augmentation;
  YAML::Node aug;
  aug["affine_prob"] = a.affine_prob;
  aug["rotate_degrees"] = a.rotate_degrees;
  aug["scale_range"] = a.scale_range;
  aug["flip_prob"] = flow(a.flip_prob);
  aug["intensity_scale_prob"] = a.intensity_scale_prob;
  aug["intensity_scale_range"] = a.intensity_scale_range;
  aug["intensity_shift_prob"] = a.intensity_shift_prob;
  aug["intensity_shift_range"] = a.intensity_shift_range;
  aug["noise_prob"] = a.noise_prob;
  aug["noise_std"] = a.noise_std;
  aug["blur_prob"] = a.blur_prob;
  aug["blur_sigma_min"] = a.blur_sigma_min;
  aug["blur_sigma_max"] = a.blur_sigma_max;
  n["augmentation"] = aug;
  if (a.channel_dropout) {
    YAML::Node d;
    d["channel"] = a.channel_dropout->channel;
    d["prob"] = a.channel_dropout->prob;
    n["channel_dropout"] = d;
  } else {
    n["channel_dropout"] = YAML::Node(YAML::NodeType::Null);
  }

  YAML::Node loss;
  loss["dice_smooth"] = c.loss.dice_smooth;
  loss["focal_gamma"] = c.loss.focal_gamma;
  n["loss"] = loss;
  YAML::Node inf;
  inf["overlap"] = c.inference.overlap;
  inf["blending"] = blending_name(c.inference.blending);
  inf["threshold"] = c.inference.threshold;
  n["inference"] = inf;
  if (!c.passthrough.empty()) {
    YAML::Node pt;
    for (const auto& [k, v] : c.passthrough) pt[k] = YAML::Load(v);
    n["passthrough"] = pt;
  }
  return n;
}

SegConfig config_from_yaml(const YAML::Node& n, SegConfig c) {
  if (!n.IsMap()) throw ValidationError("config must be a YAML mapping");
  try {
    read(n, "algorithm", c.algorithm);
    read(n, "modality", c.modality);
    read(n, "datalist", c.datalist);
    read(n, "dataroot", c.dataroot);
    bool sigmoid = c.subregions.sigmoid;
    read(n, "sigmoid", sigmoid);
    if (n["class_names"]) {
      c.subregions = spec_from_yaml(n["class_names"], sigmoid);
    } else {
      c.subregions.sigmoid = sigmoid;
    }
    read(n, "in_channels", c.in_channels);
    if (n["patch_size"]) {
      if (n["patch_size"].IsSequence()) {
        auto v = n["patch_size"].as<std::vector<int64_t>>();
        if (v.size() != 3) throw ValidationError("patch_size needs 3 entries");
        std::copy(v.begin(), v.end(), c.patch_size.begin());
      } else {
        c.patch_size.fill(n["patch_size"].as<int64_t>());
      }
    }
    read(n, "init_filters", c.init_filters);
    const int old_levels = c.num_levels;
    read(n, "num_levels", c.num_levels);
    read(n, "blocks_down", c.blocks_down);
    read(n, "blocks_up", c.blocks_up);
    if (c.num_levels != old_levels) {
      // Resize per-level lists that were not given explicitly.
      if (!n["blocks_down"]) {
        const std::vector<int> full{1, 2, 2, 4, 4};
        c.blocks_down.assign(static_cast<size_t>(c.num_levels), 4);
        for (size_t i = 0; i < c.blocks_down.size() && i < full.size(); ++i) c.blocks_down[i] = full[i];
      }
      if (!n["blocks_up"]) c.blocks_up.assign(static_cast<size_t>(std::max(0, c.num_levels - 1)), 1);
      if (!n["deep_supervision_levels"]) c.deep_supervision_levels = std::max(0, c.num_levels - 1);
    }
    read(n, "deep_supervision_levels", c.deep_supervision_levels);
    read(n, "epochs", c.epochs);
    read(n, "learning_rate", c.learning_rate);
    read(n, "weight_decay", c.weight_decay);
    read(n, "batch_size_per_device", c.batch_size_per_device);
    if (n["adam_betas"]) {
      auto b = n["adam_betas"].as<std::vector<double>>();
      if (b.size() != 2) throw ValidationError("adam_betas needs 2 entries");
      c.adam_beta1 = b[0];
      c.adam_beta2 = b[1];
    }
    read(n, "adam_eps", c.adam_eps);
    read(n, "validation_interval", c.validation_interval);
    read(n, "num_folds", c.num_folds);
    read(n, "fold_seed", c.fold_seed);
    read(n, "seed", c.seed);
    read(n, "network_seed", c.network_seed);
    read(n, "foreground_crop_prob", c.foreground_crop_prob);
    if (n["augmentation"]) {
      if (n["augmentation"].IsScalar() && !n["augmentation"].as<bool>()) {
        auto keep = c.augmentation.channel_dropout;
        c.augmentation = AugmentationPolicy::identity();
        c.augmentation.channel_dropout = keep;
      } else if (n["augmentation"].IsMap()) {
        c.augmentation = policy_from_yaml(n["augmentation"], c.augmentation);
      }
    }
    if (n["channel_dropout"]) {
      const auto& d = n["channel_dropout"];
      if (d.IsNull()) {
        c.augmentation.channel_dropout.reset();
      } else {
        ChannelDropout cd;
        read(d, "channel", cd.channel);
        read(d, "prob", cd.prob);
        c.augmentation.channel_dropout = cd;
      }
    }
    if (n["loss"]) {
      read(n["loss"], "dice_smooth", c.loss.dice_smooth);
      read(n["loss"], "focal_gamma", c.loss.focal_gamma);
    }
    if (n["inference"]) {
      read(n["inference"], "overlap", c.inference.overlap);
      if (n["inference"]["blending"]) c.inference.blending = blending_from(n["inference"]["blending"].as<std::string>());
      read(n["inference"], "threshold", c.inference.threshold);
    }
    if (n["passthrough"] && n["passthrough"].IsMap()) {
      for (const auto& kv : n["passthrough"]) {
        YAML::Emitter e;
        e << kv.second;
        c.passthrough[kv.first.as<std::string>()] = e.c_str();
      }
    }
    for (const auto& kv : n) {
      const auto key = kv.first.as<std::string>();
      if (!known_keys().count(key)) {
        YAML::Emitter e;
        e << kv.second;
        c.passthrough[key] = e.c_str();
      }
    }
  } catch (const YAML::Exception& e) {
    throw ValidationError(std::string("config value has the wrong type: ") + e.what());
  }
  return c;
}

void save_config(const SegConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  YAML::Emitter e;
  e << to_yaml(cfg);
  out << e.c_str() << "\n";
}

SegConfig load_config(const std::string& path) {
  YAML::Node n;
  try {
    n = YAML::LoadFile(path);
  } catch (const YAML::BadFile&) {
    throw IoError("cannot open " + path);
  } catch (const YAML::ParserException& e) {
    throw ParseError(path + ": " + e.what());
  }
  SegConfig c = config_from_yaml(n);
  c.validate();
  return c;
}

UserInput parse_user_input(const std::string& text, const std::string& base_dir) {
  YAML::Node n;
  try {
    n = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ParseError(std::string("input.yaml: ") + e.what());
  }
  if (!n.IsMap()) throw ParseError("input.yaml: expected a mapping at top level");
  for (const char* key : {"modality", "datalist", "dataroot", "class_names"}) {
    if (!n[key]) throw ValidationError(std::string("input.yaml: missing required key '") + key + "'");
  }
  auto resolve = [&](const std::string& p) {
    if (p.empty() || fs::path(p).is_absolute() || base_dir.empty()) return p;
    return (fs::path(base_dir) / p).lexically_normal().string();
  };
  UserInput u;
  try {
    u.modality = n["modality"].as<std::string>();
    u.datalist = resolve(n["datalist"].as<std::string>());
    u.dataroot = resolve(n["dataroot"].as<std::string>());
    const bool sigmoid = n["sigmoid"] ? n["sigmoid"].as<bool>() : false;
    u.subregions = spec_from_yaml(n["class_names"], sigmoid);
  } catch (const YAML::Exception& e) {
    throw ValidationError(std::string("input.yaml: ") + e.what());
  }
  u.subregions.validate();
  u.overrides = YAML::Node(YAML::NodeType::Map);
  for (const auto& kv : n) {
    const auto key = kv.first.as<std::string>();
    if (key == "modality" || key == "datalist" || key == "dataroot" || key == "class_names" || key == "sigmoid") continue;
    u.overrides[key] = kv.second;
  }
  return u;
}

UserInput load_user_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_user_input(ss.str(), fs::path(path).parent_path().string());
}

}  // namespace autoseg
