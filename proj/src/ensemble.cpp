#include "autoseg/ensemble.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "autoseg/error.hpp"
#include "autoseg/metrics.hpp"

namespace fs = std::filesystem;

namespace autoseg {

void EnsembleSpec::validate(const SubregionSpec& spec) const {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValidationError("ensemble threshold must lie in (0, 1)");
  window.validate();
  for (const auto& c : spec.classes) {
    auto it = subregions.find(c.name);
    if (it == subregions.end() || it->second.empty()) {
      throw ValidationError("ensemble has no checkpoints for subregion '" + c.name + "'");
    }
  }
  for (const auto& [name, paths] : subregions) {
    if (spec.find(name) < 0) throw ValidationError("ensemble names unknown subregion '" + name + "'");
  }
}

nlohmann::json EnsembleSpec::to_json() const {
  return {{"subregions", subregions},
          {"threshold", threshold},
          {"window", {window.size.d, window.size.h, window.size.w}},
          {"overlap", window.overlap},
          {"blending", window.blending == Blending::gaussian ? "gaussian" : "uniform"}};
}

EnsembleSpec EnsembleSpec::from_json(const nlohmann::json& j) {
  EnsembleSpec e;
  try {
    e.subregions = j.at("subregions").get<std::map<std::string, std::vector<std::string>>>();
    e.threshold = j.value("threshold", 0.5);
    if (j.contains("window")) {
      const auto w = j.at("window").get<std::vector<int64_t>>();
      if (w.size() != 3) throw ParseError("ensemble window needs three extents");
      e.window.size = {w[0], w[1], w[2]};
    }
    e.window.overlap = j.value("overlap", 0.25);
    const std::string b = j.value("blending", std::string("gaussian"));
    if (b == "gaussian") {
      e.window.blending = Blending::gaussian;
    } else if (b == "uniform") {
      e.window.blending = Blending::uniform;
    } else {
      throw ParseError("unknown blending '" + b + "'");
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("ensemble spec: ") + ex.what());
  }
  return e;
}

void EnsembleSpec::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << to_json().dump(2) << "\n";
}

EnsembleSpec EnsembleSpec::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(path + ": " + ex.what());
  }
}

EnsembleSpec default_ensemble_spec(const Registry& registry, const std::string& registry_dir, const SubregionSpec& spec,
                                   const SegConfig& cfg) {
  EnsembleSpec e;
  e.threshold = cfg.inference.threshold;
  e.window = {cfg.patch(), cfg.inference.overlap, cfg.inference.blending};
  std::set<int> folds;
  for (const auto& r : registry.entries) folds.insert(r.fold);
  for (const auto& c : spec.classes) {
    auto& list = e.subregions[c.name];
    for (int f : folds) {
      std::set<int> epochs;
      for (const std::string& tag : {std::string("best_avg"), "best_" + c.name, std::string("last")}) {
        for (const auto& r : registry.entries) {
          if (r.fold != f || r.tag != tag) continue;
          if (!epochs.insert(r.epoch).second) continue;
          list.push_back((fs::path(registry_dir) / r.path).lexically_normal().string());
        }
      }
    }
  }
  return e;
}

Tensorf ensemble_probs(const std::vector<Tensorf>& maps, const std::vector<std::vector<size_t>>& sources) {
  if (maps.empty()) throw ValidationError("ensemble needs at least one probability map");
  const Shape& shape = maps.front().shape();
  if (shape.size() != 4) throw ShapeError("probability maps must be K x D x H x W, got " + shape_str(shape));
  for (const auto& m : maps) {
    if (m.shape() != shape) throw ShapeError("probability map " + shape_str(m.shape()) + " differs from " + shape_str(shape));
  }
  const int64_t K = shape[0];
  const int64_t vox = maps.front().spatial().voxels();
  if (!sources.empty() && static_cast<int64_t>(sources.size()) != K) {
    throw ValidationError("ensemble needs one source list per channel");
  }
  Tensorf out(shape);
  for (int64_t k = 0; k < K; ++k) {
    std::vector<size_t> src;
    if (sources.empty() || sources[static_cast<size_t>(k)].empty()) {
      for (size_t i = 0; i < maps.size(); ++i) src.push_back(i);
    } else {
      src = sources[static_cast<size_t>(k)];
    }
    for (size_t i : src) {
      if (i >= maps.size()) throw ValidationError("ensemble source index out of range");
    }
    const double count = static_cast<double>(src.size());
#pragma omp parallel for simd schedule(static)
    for (int64_t v = 0; v < vox; ++v) {
      double acc = 0.0;
      for (size_t i : src) acc += static_cast<double>(maps[i][k * vox + v]);
      out[k * vox + v] = static_cast<float>(acc / count);
    }
  }
  return out;
}

LabelVolume fuse_to_labels(const Tensorf& probs, const SubregionSpec& spec, double threshold) {
  if (probs.rank() != 4 || probs.dim(0) != static_cast<int64_t>(spec.size())) {
    throw ShapeError("probabilities " + shape_str(probs.shape()) + " do not match " + std::to_string(spec.size()) +
                     " subregions");
  }
  const std::vector<int> order = spec.nesting_order();  // outermost first
  std::vector<int> paint(order.size());
  for (size_t i = 0; i < order.size(); ++i) {
    const auto& outer = spec.classes[static_cast<size_t>(order[i])].index;
    std::set<int> diff = outer;
    if (i + 1 < order.size()) {
      for (int v : spec.classes[static_cast<size_t>(order[i + 1])].index) diff.erase(v);
    }
    if (diff.size() != 1) {
      throw ValidationError("subregion '" + spec.classes[static_cast<size_t>(order[i])].name +
                            "' does not add exactly one label over its inner neighbour");
    }
    paint[i] = *diff.begin();
  }
  const Shape3 s = probs.spatial();
  const int64_t vox = s.voxels();
  LabelVolume out;
  out.data = Tensor<int32_t>({s.d, s.h, s.w}, 0);
  const float thr = static_cast<float>(threshold);
  for (size_t i = 0; i < order.size(); ++i) {
    const float* p = probs.data() + static_cast<int64_t>(order[i]) * vox;
    const int32_t label = paint[i];
#pragma omp parallel for simd schedule(static)
    for (int64_t v = 0; v < vox; ++v) {
      if (p[v] > thr) out.data[v] = label;
    }
  }
  return out;
}

EnsemblePredictor::EnsemblePredictor(const EnsembleSpec& ens, const SubregionSpec& spec) : ens_(ens), spec_(spec) {
  ens_.validate(spec_);
  std::map<std::string, size_t> index;
  sources_.resize(spec_.size());
  for (size_t k = 0; k < spec_.size(); ++k) {
    for (const auto& path : ens_.subregions.at(spec_.classes[k].name)) {
      auto it = index.find(path);
      if (it == index.end()) {
        LoadedModel m = load_checkpoint(path);
        if (m.meta.spec.out_channels != static_cast<int>(spec_.size())) {
          throw ShapeError(path + ": model has " + std::to_string(m.meta.spec.out_channels) + " outputs, expected " +
                           std::to_string(spec_.size()));
        }
        it = index.emplace(path, models_.size()).first;
        models_.push_back(std::move(m.net));
      }
      sources_[k].push_back(it->second);
    }
  }
}

Tensorf EnsemblePredictor::predict_probs(const Tensorf& image) {
  std::vector<Tensorf> maps;
  maps.reserve(models_.size());
  for (auto& m : models_) maps.push_back(sliding_window_infer(*m, image, ens_.window));
  return ensemble_probs(maps, sources_);
}

LabelVolume EnsemblePredictor::predict_labels(const MultiChannelVolume& image) {
  LabelVolume out = fuse_to_labels(predict_probs(image.data), spec_, ens_.threshold);
  out.spacing = image.spacing;
  out.affine = image.affine;
  return out;
}

std::vector<std::string> infer_cases(EnsemblePredictor& predictor, const std::vector<const CaseRecord*>& cases,
                                     int in_channels, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::vector<std::string> written;
  for (const auto* rec : cases) {
    MultiChannelVolume img = load_case_image(*rec, in_channels);
    normalize_inplace(img.data);
    const LabelVolume lab = predictor.predict_labels(img);
    const std::string path = (fs::path(out_dir) / prediction_filename(rec->case_id)).string();
    write_volume(lab, path);
    written.push_back(path);
  }
  return written;
}

}  // namespace autoseg
