#pragma once

#include <array>
#include <string>
#include <vector>

#include "autoseg/manifest.hpp"
#include "autoseg/subregion.hpp"
#include "autoseg/volume.hpp"

namespace autoseg {

// Binary masks here are D x H x W (any tensor whose numel equals its spatial voxels).
struct Confusion {
  int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  bool operator==(const Confusion&) const = default;
};

Confusion confusion(const Mask& pred, const Mask& ref);  // ShapeError on mismatch

// 2TP / (2TP + FP + FN); both empty -> 1.
double dice(const Mask& pred, const Mask& ref);
double dice(const Confusion& c);

// Empty ref -> sensitivity 1; all-foreground ref -> specificity 1.
std::pair<double, double> sensitivity_specificity(const Mask& pred, const Mask& ref);
std::pair<double, double> sensitivity_specificity(const Confusion& c);

// Foreground voxels with a face neighbour that is background or outside the grid.
Mask boundary_voxels(const Mask& m);

// Squared Euclidean distance (mm^2) from every voxel to the nearest nonzero voxel
// of `features`; +inf when there is none. Exact, separable.
std::vector<double> squared_edt(const Mask& features, const Spacing& spacing);

struct HausdorffOptions {
  enum class EmptyPenalty { diagonal, fixed };
  EmptyPenalty penalty = EmptyPenalty::diagonal;
  double fixed_value = 373.13;  // used with EmptyPenalty::fixed
};

struct Hausdorff {
  double value = 0.0;
  bool penalized = false;  // exactly one mask was empty
};

double volume_diagonal(const Shape3& shape, const Spacing& spacing);

// Nearest-rank 95th percentile of the pooled boundary-to-boundary distances in
// both directions. Both empty -> 0.
Hausdorff hd95(const Mask& pred, const Mask& ref, const Spacing& spacing, const HausdorffOptions& opts = {});

struct SubregionMetrics {
  double dice = 0.0;
  double hd95 = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  bool hd95_penalized = false;
};

struct CaseMetrics {
  std::string case_id;
  std::vector<SubregionMetrics> per_class;  // SubregionSpec order
};

CaseMetrics evaluate_case(const std::string& case_id, const LabelVolume& pred, const LabelVolume& ref,
                          const SubregionSpec& spec, const HausdorffOptions& opts = {});

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

struct CohortReport {
  std::vector<std::string> class_names;  // SubregionSpec order
  std::vector<int> row_order;            // innermost class first
  std::vector<CaseMetrics> cases;        // sorted by case id
  std::vector<std::string> missing;      // reference cases without a prediction
  // summary[k][m], m = dice, hd95, sensitivity, specificity
  std::vector<std::array<MeanStd, 4>> summary;
  // Mean of the subregion means; std of per-case subregion averages.
  std::array<MeanStd, 4> average;

  std::string csv() const;
  std::string table() const;
};

CohortReport aggregate(std::vector<CaseMetrics> cases, const SubregionSpec& spec,
                       std::vector<std::string> missing = {});

// Reads <pred_dir>/<case_id>_seg.nii.gz for every labelled manifest case.
CohortReport evaluate_cohort(const std::string& pred_dir, const DatasetManifest& manifest,
                             const SubregionSpec& spec, const HausdorffOptions& opts = {});

std::string prediction_filename(const std::string& case_id);

}  // namespace autoseg
