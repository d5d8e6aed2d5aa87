#include "autoseg/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "autoseg/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace autoseg {

namespace {

std::string resolve(const std::string& p, const std::string& root) {
  fs::path path(p);
  if (path.is_absolute() || root.empty()) return path.lexically_normal().string();
  return (fs::path(root) / path).lexically_normal().string();
}

std::string stem_of(const std::string& p) {
  std::string name = fs::path(p).filename().string();
  for (const char* ext : {".nii.gz", ".nii", ".json", ".bin"}) {
    const std::string e(ext);
    if (name.size() > e.size() && name.compare(name.size() - e.size(), e.size(), e) == 0) {
      return name.substr(0, name.size() - e.size());
    }
  }
  return name;
}

size_t line_of(const std::string& text, size_t byte) {
  size_t line = 1;
  for (size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') ++line;
  }
  return line;
}

}  // namespace

bool CaseRecord::any_class_available() const {
  for (auto a : available_classes) {
    if (a) return true;
  }
  return false;
}

std::vector<const CaseRecord*> DatasetManifest::fold_cases(int fold, bool held_out) const {
  std::vector<const CaseRecord*> out;
  for (const auto& c : cases) {
    if ((c.fold == fold) == held_out) out.push_back(&c);
  }
  return out;
}

void DatasetManifest::validate() const {
  if (cases.empty()) throw ValidationError("manifest has no cases");
  if (num_folds < 1) throw ValidationError("manifest num_folds must be >= 1");
  std::vector<int> counts(static_cast<size_t>(num_folds), 0);
  const size_t nmod = num_modalities();
  std::set<std::string> ids;
  for (const auto& c : cases) {
    if (c.fold < 0 || c.fold >= num_folds) {
      throw ValidationError("case '" + c.case_id + "' has fold " + std::to_string(c.fold) + " outside [0, " +
                            std::to_string(num_folds) + ")");
    }
    if (c.image_paths.size() != nmod) {
      throw ValidationError("case '" + c.case_id + "' lists " + std::to_string(c.image_paths.size()) +
                            " modalities, expected " + std::to_string(nmod));
    }
    if (!ids.insert(c.case_id).second) throw ValidationError("duplicate case id '" + c.case_id + "'");
    ++counts[static_cast<size_t>(c.fold)];
  }
  for (int f = 0; f < num_folds; ++f) {
    if (counts[static_cast<size_t>(f)] == 0) throw ValidationError("fold " + std::to_string(f) + " has no cases");
  }
}

DatasetManifest parse_manifest(const std::string& text, const std::string& dataroot, const SubregionSpec& spec,
                               const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(source + ": line " + std::to_string(line_of(text, e.byte)) + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("training") || !doc["training"].is_array()) {
    throw ValidationError(source + ": expected top-level \"training\" list");
  }

  DatasetManifest m;
  m.modality = doc.value("modality", std::string{});
  int max_fold = -1;
  const auto& entries = doc["training"];
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const std::string where = source + ": training[" + std::to_string(i) + "]";
    if (!e.is_object()) throw ValidationError(where + " is not an object");
    if (!e.contains("fold")) throw ValidationError(where + " is missing \"fold\"");
    if (!e["fold"].is_number_integer()) throw ValidationError(where + " \"fold\" must be an integer");
    if (!e.contains("image")) throw ValidationError(where + " is missing \"image\"");

    CaseRecord c;
    c.fold = e["fold"].get<int>();
    if (c.fold < 0) throw ValidationError(where + " has negative fold");
    max_fold = std::max(max_fold, c.fold);

    const json& images = e["image"];
    if (images.is_string()) {
      c.image_paths.emplace_back(resolve(images.get<std::string>(), dataroot));
    } else if (images.is_array()) {
      for (const auto& p : images) {
        if (p.is_null()) {
          c.image_paths.emplace_back(std::nullopt);
        } else if (p.is_string()) {
          c.image_paths.emplace_back(resolve(p.get<std::string>(), dataroot));
        } else {
          throw ValidationError(where + " \"image\" entries must be strings or null");
        }
      }
    } else {
      throw ValidationError(where + " \"image\" must be a list");
    }
    if (c.image_paths.empty()) throw ValidationError(where + " lists no images");

    if (e.contains("label") && e["label"].is_string()) {
      c.label_path = resolve(e["label"].get<std::string>(), dataroot);
    } else if (e.contains("label") && !e["label"].is_null()) {
      throw ValidationError(where + " \"label\" must be a string or null");
    }

    if (e.contains("case_id")) {
      c.case_id = e["case_id"].get<std::string>();
    } else if (c.label_path) {
      c.case_id = stem_of(*c.label_path);
    } else {
      for (const auto& p : c.image_paths) {
        if (p) {
          c.case_id = stem_of(*p);
          break;
        }
      }
    }
    if (c.case_id.empty()) throw ValidationError(where + " has no present image to derive a case id from");

    c.available_classes.assign(spec.size(), c.label_path ? 1 : 0);
    if (c.label_path && e.contains("classes")) {
      c.available_classes.assign(spec.size(), 0);
      for (const auto& n : e["classes"]) {
        const int k = spec.find(n.get<std::string>());
        if (k < 0) throw ValidationError(where + " names unknown class '" + n.get<std::string>() + "'");
        c.available_classes[static_cast<size_t>(k)] = 1;
      }
    }

    for (const auto& p : c.image_paths) {
      if (p && !fs::exists(*p)) throw ManifestError("case '" + c.case_id + "': image file not found: " + *p);
    }
    if (c.label_path && !fs::exists(*c.label_path)) {
      throw ManifestError("case '" + c.case_id + "': label file not found: " + *c.label_path);
    }
    m.cases.push_back(std::move(c));
  }
  m.num_folds = doc.contains("num_folds") ? doc["num_folds"].get<int>() : max_fold + 1;
  m.validate();
  return m;
}

DatasetManifest load_manifest(const std::string& path, const std::string& dataroot, const SubregionSpec& spec) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open datalist " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), dataroot, spec, path);
}

}  // namespace autoseg
