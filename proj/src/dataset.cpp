#include "autoseg/dataset.hpp"

#include <exception>

#include "autoseg/error.hpp"
#include "autoseg/transforms.hpp"

namespace autoseg {

MultiChannelVolume load_case_image(const CaseRecord& rec, int in_channels) {
  const size_t nmod = rec.image_paths.size();
  if (nmod == 1 && in_channels > 1) {
    if (!rec.image_paths[0]) throw ValidationError(rec.case_id + ": the only image entry is null");
    MultiChannelVolume v = read_image(*rec.image_paths[0]);
    if (v.channels() != in_channels) {
      throw ShapeError(rec.case_id + ": image has " + std::to_string(v.channels()) + " channels, expected " +
                       std::to_string(in_channels));
    }
    return v;
  }
  if (static_cast<int>(nmod) != in_channels) {
    throw ShapeError(rec.case_id + ": " + std::to_string(nmod) + " modalities listed, expected " +
                     std::to_string(in_channels));
  }
  MultiChannelVolume out;
  bool have_geometry = false;
  std::vector<std::pair<size_t, Tensorf>> loaded;
  for (size_t c = 0; c < nmod; ++c) {
    if (!rec.image_paths[c]) continue;
    MultiChannelVolume v = read_image(*rec.image_paths[c]);
    if (v.channels() != 1) throw ShapeError(*rec.image_paths[c] + ": expected a single-channel modality file");
    if (!have_geometry) {
      out.spacing = v.spacing;
      out.affine = v.affine;
      have_geometry = true;
    } else if (v.shape() != loaded.front().second.spatial()) {
      throw ShapeError(rec.case_id + ": modality " + std::to_string(c) + " has shape " + v.shape().str() +
                       ", expected " + loaded.front().second.spatial().str());
    }
    loaded.emplace_back(c, std::move(v.data));
  }
  if (loaded.empty()) throw ValidationError(rec.case_id + ": every modality is absent");
  const Shape3 s = loaded.front().second.spatial();
  out.data = Tensorf({in_channels, s.d, s.h, s.w}, 0.0f);
  for (const auto& [c, t] : loaded) {
    std::copy(t.data(), t.data() + s.voxels(), out.data.data() + static_cast<int64_t>(c) * s.voxels());
  }
  return out;
}

PreparedCase prepare_case(const CaseRecord& rec, const SubregionSpec& spec, int in_channels, bool with_label) {
  PreparedCase pc;
  pc.case_id = rec.case_id;
  pc.image = load_case_image(rec, in_channels);
  normalize_inplace(pc.image.data);
  pc.present.assign(static_cast<size_t>(in_channels), 1);
  if (static_cast<int>(rec.image_paths.size()) == in_channels) {
    for (size_t c = 0; c < rec.image_paths.size(); ++c) pc.present[c] = rec.image_paths[c].has_value();
  }
  pc.available.assign(spec.size(), 0);
  if (with_label && rec.label_path) {
    const LabelVolume lab = read_label(*rec.label_path);
    if (lab.shape() != pc.image.shape()) {
      throw ShapeError(rec.case_id + ": label shape " + lab.shape().str() + " differs from image " +
                       pc.image.shape().str());
    }
    MultiLabelMask m = map_labels(lab, spec);
    pc.mask = std::move(m.data);
    pc.available = rec.available_classes;
    if (pc.available.size() != spec.size()) pc.available.assign(spec.size(), 1);
  }
  return pc;
}

std::vector<PreparedCase> prepare_cases(const std::vector<const CaseRecord*>& recs, const SubregionSpec& spec,
                                        int in_channels, bool with_label) {
  std::vector<PreparedCase> out(recs.size());
  std::vector<std::exception_ptr> errors(recs.size());
#pragma omp parallel for schedule(dynamic)
  for (size_t i = 0; i < recs.size(); ++i) {
    try {
      out[i] = prepare_case(*recs[i], spec, in_channels, with_label);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace autoseg
