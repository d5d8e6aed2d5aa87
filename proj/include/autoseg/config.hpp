#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "autoseg/subregion.hpp"
#include "autoseg/tensor.hpp"
#include "autoseg/transforms.hpp"

namespace autoseg {

enum class Blending { uniform, gaussian };

struct LossSettings {
  double dice_smooth = 1e-5;
  double focal_gamma = 2.0;
  bool operator==(const LossSettings&) const = default;
};

struct InferenceSettings {
  double overlap = 0.25;
  Blending blending = Blending::gaussian;
  double threshold = 0.5;
  bool operator==(const InferenceSettings&) const = default;
};

// Fully resolved hyperparameters for one SegResNet run.
struct SegConfig {
  std::string algorithm = "segresnet";
  std::string modality = "MRI";
  std::string datalist;
  std::string dataroot;
  SubregionSpec subregions = SubregionSpec::brats();
  int in_channels = 4;

  std::array<int64_t, 3> patch_size{32, 32, 32};
  int init_filters = 8;
  int num_levels = 5;
  std::vector<int> blocks_down{1, 2, 2, 4, 4};
  std::vector<int> blocks_up{1, 1, 1, 1};
  int deep_supervision_levels = 4;

  int epochs = 600;
  double learning_rate = 2e-4;
  double weight_decay = 1e-5;
  int batch_size_per_device = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int validation_interval = 5;

  int num_folds = 5;
  uint64_t fold_seed = 0;
  uint64_t seed = 0;
  double foreground_crop_prob = 0.7;
  uint64_t network_seed = 0;

  AugmentationPolicy augmentation;
  LossSettings loss;
  InferenceSettings inference;

  // Unrecognised input.yaml keys, kept verbatim for audit.
  std::map<std::string, std::string> passthrough;

  Shape3 patch() const { return {patch_size[0], patch_size[1], patch_size[2]}; }
  void validate() const;  // ValidationError
  bool operator==(const SegConfig&) const = default;
};

YAML::Node to_yaml(const SegConfig& cfg);
// Reads every known key present in `node` over `base`; unknown keys go to passthrough.
SegConfig config_from_yaml(const YAML::Node& node, SegConfig base = {});
void save_config(const SegConfig& cfg, const std::string& path);
SegConfig load_config(const std::string& path);

// The user-facing input.yaml.
struct UserInput {
  std::string modality;
  std::string datalist;  // resolved relative to the input file's directory
  std::string dataroot;
  SubregionSpec subregions;
  YAML::Node overrides;  // every other key
};

UserInput parse_user_input(const std::string& yaml_text, const std::string& base_dir = "");
UserInput load_user_input(const std::string& path);

}  // namespace autoseg
