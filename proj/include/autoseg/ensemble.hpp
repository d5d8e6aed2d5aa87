#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "autoseg/checkpoint.hpp"
#include "autoseg/config.hpp"
#include "autoseg/dataset.hpp"
#include "autoseg/inference.hpp"

namespace autoseg {

struct EnsembleSpec {
  // Subregion name -> checkpoints whose channel for that subregion is averaged.
  std::map<std::string, std::vector<std::string>> subregions;
  double threshold = 0.5;
  WindowSpec window;

  void validate(const SubregionSpec& spec) const;  // ValidationError
  nlohmann::json to_json() const;
  static EnsembleSpec from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static EnsembleSpec load(const std::string& path);
};

// Per fold and subregion k: {best_avg, best_k, last}, with entries saved at the same
// (fold, epoch) collapsed onto one file. Paths resolve against registry_dir.
EnsembleSpec default_ensemble_spec(const Registry& registry, const std::string& registry_dir,
                                   const SubregionSpec& spec, const SegConfig& cfg);

// Channel k of the result is the mean of channel k over maps[sources[k]]; an empty
// source list means every map. ShapeError on mismatched shapes.
Tensorf ensemble_probs(const std::vector<Tensorf>& maps, const std::vector<std::vector<size_t>>& sources = {});

// Thresholds every channel, then paints from the outermost to the innermost class
// the label that class adds over its inner neighbour, so inner classes win.
LabelVolume fuse_to_labels(const Tensorf& probs, const SubregionSpec& spec, double threshold = 0.5);

// Loads every distinct checkpoint once and predicts per-subregion ensembles.
class EnsemblePredictor {
 public:
  EnsemblePredictor(const EnsembleSpec& ens, const SubregionSpec& spec);

  Tensorf predict_probs(const Tensorf& image);  // K x D x H x W
  LabelVolume predict_labels(const MultiChannelVolume& image);
  size_t model_count() const { return models_.size(); }

 private:
  EnsembleSpec ens_;
  SubregionSpec spec_;
  std::vector<std::unique_ptr<SegResNet>> models_;
  std::vector<std::vector<size_t>> sources_;  // per subregion channel, indices into models_
};

// Writes <out_dir>/<case_id>_seg.nii.gz for every case; returns the written paths.
std::vector<std::string> infer_cases(EnsemblePredictor& predictor, const std::vector<const CaseRecord*>& cases,
                                     int in_channels, const std::string& out_dir);

}  // namespace autoseg
