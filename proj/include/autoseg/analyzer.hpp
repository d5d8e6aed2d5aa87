#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "autoseg/config.hpp"
#include "autoseg/manifest.hpp"

namespace autoseg {

struct IntensityStats {
  bool foreground_only = true;  // computed over nonzero voxels
  int64_t count = 0;
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> percentile_levels;  // in [0, 100]
  std::vector<double> percentiles;        // monotone
  int absent_cases = 0;                   // cases with this modality missing
};

struct DatasetStats {
  std::string modality;
  int num_folds = 0;
  std::vector<IntensityStats> modalities;
  std::vector<std::string> case_ids;
  std::vector<Shape3> case_shapes;
  Shape3 median_shape;
  std::set<int> label_alphabet;
  std::map<int, double> label_fractions;  // voxel fraction per label value over labelled cases
};

DatasetStats analyze(const DatasetManifest& manifest);
nlohmann::json to_json(const DatasetStats& stats);

// Derivation rules: patch = largest multiple of 2^(levels-1) inside the median
// shape per axis (capped at 224x224x144, floor 2^(levels-1)); in_channels from
// the modality count; channel dropout enabled on any modality absent in some case.
SegConfig generate_config(const DatasetStats& stats, const UserInput& input);

// Seeded random fold index per case (in input order); fold sizes differ by at most one
// and the result depends only on the set of ids and the seed.
std::vector<int> assign_folds(const std::vector<std::string>& case_ids, int num_folds, uint64_t seed);

}  // namespace autoseg
