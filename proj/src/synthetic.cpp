#include "autoseg/synthetic.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "autoseg/analyzer.hpp"
#include "autoseg/error.hpp"
#include "autoseg/rng.hpp"

namespace fs = std::filesystem;

namespace autoseg {

namespace {

// Tissue means per modality: brain, edema, necrosis, enhancing.
constexpr double kContrast[4][4] = {
    {1.0, 0.8, 0.5, 0.7},
    {1.0, 1.0, 0.6, 2.0},
    {1.0, 1.8, 2.0, 1.5},
    {1.0, 2.0, 1.2, 1.4},
};

}  // namespace

SyntheticCase make_synthetic_case(const std::string& case_id, const Shape3& shape, uint64_t seed, bool metastasis) {
  if (shape.d < 8 || shape.h < 8 || shape.w < 8) throw ValidationError("synthetic volumes need every axis >= 8");
  Rng rng(seed);
  const std::array<double, 3> ext{static_cast<double>(shape.d), static_cast<double>(shape.h),
                                  static_cast<double>(shape.w)};
  std::array<double, 3> brain_c, brain_r, les_c, les_r;
  for (int a = 0; a < 3; ++a) {
    brain_c[a] = ext[a] / 2.0 + uniform(rng, -0.03, 0.03) * ext[a];
    brain_r[a] = ext[a] * uniform(rng, 0.40, 0.46);
  }
  for (int a = 0; a < 3; ++a) {
    les_r[a] = ext[a] * uniform(rng, 0.20, 0.27);
    const double slack = std::max(0.0, brain_r[a] - les_r[a] * 1.05);
    les_c[a] = brain_c[a] + uniform(rng, -0.5, 0.5) * slack;
  }
  const double core_frac = uniform(rng, 0.6, 0.7);
  const double necro_frac = uniform(rng, 0.45, 0.55);
  std::array<double, 4> gain;
  for (auto& g : gain) g = uniform(rng, 80.0, 120.0);
  std::normal_distribution<double> noise(0.0, 0.05);

  SyntheticCase sc;
  sc.case_id = case_id;
  sc.metastasis = metastasis;
  sc.image.data = Tensorf({4, shape.d, shape.h, shape.w}, 0.0f);
  sc.label.data = Tensor<int32_t>({shape.d, shape.h, shape.w}, 0);
  const int64_t vox = shape.voxels();
  for (int64_t z = 0; z < shape.d; ++z) {
    for (int64_t y = 0; y < shape.h; ++y) {
      for (int64_t x = 0; x < shape.w; ++x) {
        const std::array<double, 3> p{z + 0.5, y + 0.5, x + 0.5};
        double rb = 0.0, rl = 0.0;
        for (int a = 0; a < 3; ++a) {
          rb += std::pow((p[a] - brain_c[a]) / brain_r[a], 2);
          rl += std::pow((p[a] - les_c[a]) / les_r[a], 2);
        }
        rl = std::sqrt(rl);
        const int64_t i = (z * shape.h + y) * shape.w + x;
        if (rb > 1.0) continue;
        int tissue = 0;
        int32_t label = 0;
        if (rl <= core_frac * necro_frac) {
          tissue = 2;
          label = 1;
        } else if (rl <= core_frac) {
          tissue = 3;
          label = 3;
        } else if (rl <= 1.0) {
          tissue = 1;
          label = 2;
        }
        sc.label.data[i] = label;
        for (int c = 0; c < 4; ++c) {
          const double v = gain[static_cast<size_t>(c)] * (kContrast[c][tissue] + noise(rng));
          sc.image.data[c * vox + i] = static_cast<float>(std::max(v, 1.0));
        }
      }
    }
  }
  if (metastasis) {
    std::fill(sc.image.data.data() + kT2Channel * vox, sc.image.data.data() + (kT2Channel + 1) * vox, 0.0f);
    for (auto& l : sc.label.data.span()) l = l == 3 ? 3 : 0;
  }
  return sc;
}

std::string make_synthetic_dataset(const std::string& out_dir, int num_cases, const Shape3& shape, uint64_t seed,
                                   const SyntheticOptions& opts) {
  if (num_cases < 1) throw ValidationError("need at least one synthetic case");
  if (opts.metastasis_fraction < 0.0 || opts.metastasis_fraction > 1.0) {
    throw ValidationError("metastasis fraction must lie in [0, 1]");
  }
  fs::create_directories(out_dir);
  const int n_meta = static_cast<int>(std::lround(opts.metastasis_fraction * num_cases));
  std::vector<std::string> ids;
  for (int i = 0; i < num_cases; ++i) ids.push_back(fmt::format("case_{:03d}", i));
  std::vector<int> folds;
  if (opts.num_folds >= 2 && num_cases >= opts.num_folds) {
    folds = assign_folds(ids, opts.num_folds, opts.fold_seed);
  } else {
    folds.assign(ids.size(), 0);
  }

  nlohmann::json training = nlohmann::json::array();
  for (int i = 0; i < num_cases; ++i) {
    // Metastasis cases are spread evenly over the index range.
    const bool meta = n_meta > 0 && (static_cast<int64_t>(i) * n_meta) / num_cases !=
                                        (static_cast<int64_t>(i + 1) * n_meta) / num_cases;
    const SyntheticCase sc = make_synthetic_case(ids[static_cast<size_t>(i)], shape, derive_seed(seed, ids[static_cast<size_t>(i)], 0), meta);
    nlohmann::json images = nlohmann::json::array();
    for (int c = 0; c < 4; ++c) {
      if (meta && c == kT2Channel) {
        images.push_back(nullptr);
        continue;
      }
      const std::string name = fmt::format("{}_{}.nii.gz", sc.case_id, kSyntheticModalities[c]);
      write_volume(MultiChannelVolume{channel_slice(sc.image.data, c, 1), sc.image.spacing, sc.image.affine},
                   (fs::path(out_dir) / name).string());
      images.push_back(name);
    }
    const std::string lab = sc.case_id + "_label.nii.gz";
    write_volume(sc.label, (fs::path(out_dir) / lab).string());
    nlohmann::json entry{{"case_id", sc.case_id}, {"image", images}, {"label", lab}, {"fold", folds[static_cast<size_t>(i)]}};
    if (meta) entry["classes"] = {"et"};
    training.push_back(entry);
  }
  nlohmann::json doc{{"modality", "MRI"}, {"training", training}};
  if (opts.num_folds >= 2) doc["num_folds"] = opts.num_folds;
  const std::string path = (fs::path(out_dir) / "dataset.json").string();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << doc.dump(2) << "\n";
  return path;
}

}  // namespace autoseg
