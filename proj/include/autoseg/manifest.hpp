#pragma once

#include <optional>
#include <string>
#include <vector>

#include "autoseg/subregion.hpp"

namespace autoseg {

struct CaseRecord {
  std::string case_id;
  std::vector<std::optional<std::string>> image_paths;  // nullopt marks an absent modality
  std::optional<std::string> label_path;
  int fold = 0;
  std::vector<uint8_t> available_classes;  // one flag per SubregionSpec class

  bool modality_present(size_t c) const { return c < image_paths.size() && image_paths[c].has_value(); }
  bool any_class_available() const;
};

struct DatasetManifest {
  std::vector<CaseRecord> cases;
  std::string modality;
  int num_folds = 0;

  size_t num_modalities() const { return cases.empty() ? 0 : cases.front().image_paths.size(); }
  std::vector<const CaseRecord*> fold_cases(int fold, bool held_out) const;
  // Throws ValidationError if folds are out of range/empty or modality counts differ.
  void validate() const;
};

// Reads a datalist:
//   {"training": [{"image": [path|null, ...], "label": path|null, "fold": int,
//                  "case_id"?: str, "classes"?: [names annotated]}], "modality"?: str}
// Relative paths resolve against dataroot. `classes` restricts available_classes;
// a null label leaves every class unavailable.
DatasetManifest load_manifest(const std::string& path, const std::string& dataroot,
                              const SubregionSpec& spec = SubregionSpec::brats());

// Parses datalist text; `source` names the file in error messages.
DatasetManifest parse_manifest(const std::string& text, const std::string& dataroot,
                               const SubregionSpec& spec, const std::string& source = "<datalist>");

}  // namespace autoseg
