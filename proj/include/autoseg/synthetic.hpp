#pragma once

#include <string>

#include "autoseg/volume.hpp"

namespace autoseg {

// Channel order of generated images.
inline constexpr const char* kSyntheticModalities[4] = {"t1", "t1c", "t2", "flair"};
inline constexpr int kT2Channel = 2;

struct SyntheticCase {
  std::string case_id;
  MultiChannelVolume image;  // 4 x D x H x W raw intensities, zero outside the brain
  LabelVolume label;         // {0: background, 1: necrosis, 2: edema, 3: enhancing}
  bool metastasis = false;   // T2 zeroed and label restricted to enhancing tumour
};

SyntheticCase make_synthetic_case(const std::string& case_id, const Shape3& shape, uint64_t seed,
                                  bool metastasis = false);

struct SyntheticOptions {
  double metastasis_fraction = 0.0;
  int num_folds = 5;
  uint64_t fold_seed = 0;
};

// Writes <id>_<modality>.nii.gz and <id>_label.nii.gz per case plus dataset.json
// (paths relative to out_dir). Metastasis cases get a null T2 entry and
// "classes": ["et"]. Returns the datalist path.
std::string make_synthetic_dataset(const std::string& out_dir, int num_cases, const Shape3& shape, uint64_t seed,
                                   const SyntheticOptions& opts = {});

}  // namespace autoseg
