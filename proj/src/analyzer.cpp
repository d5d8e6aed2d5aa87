#include "autoseg/analyzer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "autoseg/error.hpp"
#include "autoseg/rng.hpp"
#include "autoseg/volume.hpp"

namespace autoseg {

namespace {

constexpr size_t kSamplesPerCase = 200000;
const std::vector<double> kPercentileLevels{0.5, 10.0, 50.0, 90.0, 99.5};

// Mergeable moments (count, mean, M2); merged in case order so the result does not
// depend on how cases were scheduled.
struct Moments {
  int64_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void merge(const Moments& o) {
    if (o.n == 0) return;
    if (n == 0) {
      *this = o;
      return;
    }
    const double total = static_cast<double>(n + o.n);
    const double delta = o.mean - mean;
    mean += delta * static_cast<double>(o.n) / total;
    m2 += o.m2 + delta * delta * static_cast<double>(n) * static_cast<double>(o.n) / total;
    n += o.n;
  }
};

struct CaseScan {
  Shape3 shape;
  std::vector<Moments> moments;
  std::vector<std::vector<float>> samples;
  std::vector<int64_t> label_counts;
  int64_t label_voxels = 0;
};

CaseScan scan_case(const CaseRecord& c, size_t nmod) {
  CaseScan s;
  s.moments.resize(nmod);
  s.samples.resize(nmod);
  bool have_shape = false;
  for (size_t m = 0; m < nmod; ++m) {
    if (!c.image_paths[m]) continue;
    const MultiChannelVolume vol = read_image(*c.image_paths[m]);
    if (vol.channels() != 1) throw ShapeError(*c.image_paths[m] + ": each modality file must hold one 3D channel");
    if (!have_shape) {
      s.shape = vol.shape();
      have_shape = true;
    }
    // Two-pass moments over nonzero voxels.
    const int64_t vox = vol.shape().voxels();
    const float* x = vol.data.data();
    int64_t n = 0;
    double sum = 0.0;
    for (int64_t i = 0; i < vox; ++i) {
      if (x[i] != 0.0f) {
        sum += x[i];
        ++n;
      }
    }
    Moments mo;
    mo.n = n;
    if (n > 0) {
      mo.mean = sum / static_cast<double>(n);
      for (int64_t i = 0; i < vox; ++i) {
        if (x[i] != 0.0f) mo.m2 += (x[i] - mo.mean) * (x[i] - mo.mean);
      }
    }
    s.moments[m] = mo;
    const int64_t stride = std::max<int64_t>(1, n / static_cast<int64_t>(kSamplesPerCase));
    int64_t k = 0;
    for (int64_t i = 0; i < vox; ++i) {
      if (x[i] != 0.0f) {
        if (k % stride == 0) s.samples[m].push_back(x[i]);
        ++k;
      }
    }
  }
  if (c.label_path) {
    const LabelVolume lab = read_label(*c.label_path);
    if (!have_shape) s.shape = lab.shape();
    for (int32_t v : lab.data.span()) {
      if (v >= static_cast<int32_t>(s.label_counts.size())) s.label_counts.resize(static_cast<size_t>(v) + 1, 0);
      ++s.label_counts[static_cast<size_t>(v)];
    }
    s.label_voxels = lab.data.numel();
  }
  return s;
}

double percentile(const std::vector<float>& sorted, double level) {
  if (sorted.empty()) return 0.0;
  const double pos = level / 100.0 * static_cast<double>(sorted.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double t = pos - static_cast<double>(lo);
  return sorted[lo] + t * (sorted[hi] - sorted[lo]);
}

int64_t median_of(std::vector<int64_t> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

DatasetStats analyze(const DatasetManifest& manifest) {
  if (manifest.cases.empty()) throw ValidationError("cannot analyze an empty manifest");
  const size_t nmod = manifest.num_modalities();
  for (const auto& c : manifest.cases) {
    if (c.image_paths.size() != nmod) {
      throw ValidationError("inconsistent modality counts: case '" + c.case_id + "' has " +
                            std::to_string(c.image_paths.size()) + ", expected " + std::to_string(nmod));
    }
  }

  const int64_t ncases = static_cast<int64_t>(manifest.cases.size());
  std::vector<CaseScan> scans(static_cast<size_t>(ncases));
  std::vector<std::string> errors(static_cast<size_t>(ncases));
#pragma omp parallel for schedule(dynamic)
  for (int64_t i = 0; i < ncases; ++i) {
    try {
      scans[static_cast<size_t>(i)] = scan_case(manifest.cases[static_cast<size_t>(i)], nmod);
    } catch (const std::exception& e) {
      errors[static_cast<size_t>(i)] = e.what();
    }
  }
  for (size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].empty()) throw IoError("case '" + manifest.cases[i].case_id + "': " + errors[i]);
  }

  DatasetStats st;
  st.modality = manifest.modality;
  st.num_folds = manifest.num_folds;
  st.modalities.resize(nmod);
  std::vector<Moments> totals(nmod);
  std::vector<std::vector<float>> pooled(nmod);
  std::vector<int64_t> label_counts;
  int64_t label_voxels = 0;
  for (size_t i = 0; i < scans.size(); ++i) {
    const auto& s = scans[i];
    const auto& c = manifest.cases[i];
    st.case_ids.push_back(c.case_id);
    st.case_shapes.push_back(s.shape);
    for (size_t m = 0; m < nmod; ++m) {
      if (!c.image_paths[m]) {
        ++st.modalities[m].absent_cases;
        continue;
      }
      totals[m].merge(s.moments[m]);
      pooled[m].insert(pooled[m].end(), s.samples[m].begin(), s.samples[m].end());
    }
    if (s.label_counts.size() > label_counts.size()) label_counts.resize(s.label_counts.size(), 0);
    for (size_t v = 0; v < s.label_counts.size(); ++v) label_counts[v] += s.label_counts[v];
    label_voxels += s.label_voxels;
  }
  for (size_t m = 0; m < nmod; ++m) {
    auto& is = st.modalities[m];
    is.count = totals[m].n;
    is.mean = totals[m].mean;
    is.std = totals[m].n > 0 ? std::sqrt(totals[m].m2 / static_cast<double>(totals[m].n)) : 0.0;
    std::sort(pooled[m].begin(), pooled[m].end());
    is.percentile_levels = kPercentileLevels;
    for (double lv : kPercentileLevels) is.percentiles.push_back(percentile(pooled[m], lv));
  }
  for (size_t v = 0; v < label_counts.size(); ++v) {
    if (label_counts[v] == 0) continue;
    st.label_alphabet.insert(static_cast<int>(v));
    st.label_fractions[static_cast<int>(v)] = static_cast<double>(label_counts[v]) / static_cast<double>(label_voxels);
  }
  std::vector<int64_t> ds, hs, ws;
  for (const auto& s : st.case_shapes) {
    ds.push_back(s.d);
    hs.push_back(s.h);
    ws.push_back(s.w);
  }
  st.median_shape = {median_of(ds), median_of(hs), median_of(ws)};
  return st;
}

nlohmann::json to_json(const DatasetStats& st) {
  nlohmann::json j;
  j["modality"] = st.modality;
  j["num_folds"] = st.num_folds;
  j["num_cases"] = st.case_ids.size();
  j["median_shape"] = {st.median_shape.d, st.median_shape.h, st.median_shape.w};
  auto& mods = j["modalities"];
  mods = nlohmann::json::array();
  for (const auto& m : st.modalities) {
    mods.push_back({{"foreground_only", m.foreground_only},
                    {"count", m.count},
                    {"mean", m.mean},
                    {"std", m.std},
                    {"percentile_levels", m.percentile_levels},
                    {"percentiles", m.percentiles},
                    {"absent_cases", m.absent_cases}});
  }
  j["label_alphabet"] = st.label_alphabet;
  nlohmann::json fr = nlohmann::json::object();
  for (const auto& [k, v] : st.label_fractions) fr[std::to_string(k)] = v;
  j["label_fractions"] = fr;
  nlohmann::json cases = nlohmann::json::array();
  for (size_t i = 0; i < st.case_ids.size(); ++i) {
    cases.push_back({{"case_id", st.case_ids[i]},
                     {"shape", {st.case_shapes[i].d, st.case_shapes[i].h, st.case_shapes[i].w}}});
  }
  j["cases"] = cases;
  return j;
}

SegConfig generate_config(const DatasetStats& stats, const UserInput& input) {
  input.subregions.validate();
  SegConfig cfg;
  cfg.modality = input.modality;
  cfg.datalist = input.datalist;
  cfg.dataroot = input.dataroot;
  cfg.subregions = input.subregions;
  cfg.in_channels = static_cast<int>(std::max<size_t>(1, stats.modalities.size()));
  if (stats.num_folds > 0) cfg.num_folds = stats.num_folds;

  // num_levels may be overridden, and the patch rule depends on it.
  SegConfig probe = input.overrides && input.overrides.IsMap() ? config_from_yaml(input.overrides, cfg) : cfg;
  const int64_t div = int64_t{1} << (probe.num_levels - 1);
  const std::array<int64_t, 3> cap{224, 224, 144};
  for (int a = 0; a < 3; ++a) {
    const int64_t fit = std::min(stats.median_shape[a] > 0 ? stats.median_shape[a] : div, cap[a]);
    cfg.patch_size[a] = std::max(div, fit / div * div);
  }
  cfg.num_levels = probe.num_levels;
  cfg.blocks_down = probe.blocks_down;
  cfg.blocks_up = probe.blocks_up;
  cfg.deep_supervision_levels = probe.deep_supervision_levels;

  for (size_t m = 0; m < stats.modalities.size(); ++m) {
    if (stats.modalities[m].absent_cases > 0) {
      cfg.augmentation.channel_dropout = ChannelDropout{static_cast<int>(m), 0.5};
      break;
    }
  }

  if (input.overrides && input.overrides.IsMap()) cfg = config_from_yaml(input.overrides, cfg);
  cfg.validate();
  return cfg;
}

std::vector<int> assign_folds(const std::vector<std::string>& case_ids, int num_folds, uint64_t seed) {
  if (num_folds < 2) throw ValidationError("num_folds must be >= 2");
  if (case_ids.size() < static_cast<size_t>(num_folds)) {
    throw ValidationError("cannot split " + std::to_string(case_ids.size()) + " cases into " +
                          std::to_string(num_folds) + " folds");
  }
  std::vector<std::string> sorted = case_ids;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw ValidationError("duplicate case ids");

  // Fisher-Yates with an explicit index draw so the permutation is fixed by the seed alone.
  Rng rng(seed);
  std::vector<size_t> perm(sorted.size());
  std::iota(perm.begin(), perm.end(), 0);
  for (size_t i = perm.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(rng() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  std::map<std::string, int> fold_of;
  for (size_t pos = 0; pos < perm.size(); ++pos) fold_of[sorted[perm[pos]]] = static_cast<int>(pos % num_folds);

  std::vector<int> out;
  out.reserve(case_ids.size());
  for (const auto& id : case_ids) out.push_back(fold_of.at(id));
  return out;
}

}  // namespace autoseg
