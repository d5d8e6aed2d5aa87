#include "autoseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <filesystem>
#include <limits>

#include <fmt/format.h>

#include "autoseg/error.hpp"
#include "autoseg/transforms.hpp"

namespace autoseg {

namespace {

Shape3 mask_shape(const Mask& m) {
  const Shape3 s = m.spatial();
  if (s.voxels() != m.numel()) throw ShapeError("expected a single-channel mask, got " + shape_str(m.shape()));
  return s;
}

void check_same(const Mask& a, const Mask& b) {
  if (mask_shape(a) != mask_shape(b)) {
    throw ShapeError("mask shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) on one line with sample
// spacing h; f holds squared distances in mm^2.
void edt_line(const double* f, double* out, int64_t n, double h, std::vector<int64_t>& v, std::vector<double>& z) {
  v.resize(static_cast<size_t>(n));
  z.resize(static_cast<size_t>(n + 1));
  int64_t k = -1;
  const double h2 = h * h;
  for (int64_t q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      k = 0;
      continue;
    }
    double s;
    while (true) {
      const int64_t p = v[static_cast<size_t>(k)];
      s = ((f[q] + h2 * static_cast<double>(q * q)) - (f[p] + h2 * static_cast<double>(p * p))) /
          (2.0 * h2 * static_cast<double>(q - p));
      if (s <= z[static_cast<size_t>(k)]) {
        --k;
        if (k < 0) break;
      } else {
        break;
      }
    }
    ++k;
    v[static_cast<size_t>(k)] = q;
    z[static_cast<size_t>(k)] = k == 0 ? -kInf : s;
    z[static_cast<size_t>(k + 1)] = kInf;
  }
  if (k < 0) {
    std::fill(out, out + n, kInf);
    return;
  }
  int64_t j = 0;
  for (int64_t q = 0; q < n; ++q) {
    while (z[static_cast<size_t>(j + 1)] < static_cast<double>(q)) ++j;
    const int64_t p = v[static_cast<size_t>(j)];
    const double d = h * static_cast<double>(q - p);
    out[q] = d * d + f[p];
  }
}

// Applies edt_line along `axis` of a D x H x W grid in place.
void edt_axis(std::vector<double>& g, const Shape3& s, int axis, double h) {
  const int64_t n = s[axis];
  const int64_t stride = axis == 0 ? s.h * s.w : axis == 1 ? s.w : 1;
  const int64_t lines = s.voxels() / n;
#pragma omp parallel
  {
    std::vector<double> in(static_cast<size_t>(n)), out(static_cast<size_t>(n));
    std::vector<int64_t> v;
    std::vector<double> z;
#pragma omp for schedule(static)
    for (int64_t l = 0; l < lines; ++l) {
      int64_t base;
      if (axis == 0) {
        base = l;
      } else if (axis == 1) {
        base = (l / s.w) * s.h * s.w + l % s.w;
      } else {
        base = l * s.w;
      }
      for (int64_t i = 0; i < n; ++i) in[static_cast<size_t>(i)] = g[static_cast<size_t>(base + i * stride)];
      edt_line(in.data(), out.data(), n, h, v, z);
      for (int64_t i = 0; i < n; ++i) g[static_cast<size_t>(base + i * stride)] = out[static_cast<size_t>(i)];
    }
  }
}

}  // namespace

Confusion confusion(const Mask& pred, const Mask& ref) {
  check_same(pred, ref);
  Confusion c;
  const int64_t n = pred.numel();
  for (int64_t i = 0; i < n; ++i) {
    const bool p = pred[i] != 0;
    const bool r = ref[i] != 0;
    if (p && r) {
      ++c.tp;
    } else if (p) {
      ++c.fp;
    } else if (r) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

double dice(const Confusion& c) {
  const int64_t den = 2 * c.tp + c.fp + c.fn;
  if (den == 0) return 1.0;
  return static_cast<double>(2 * c.tp) / static_cast<double>(den);
}

double dice(const Mask& pred, const Mask& ref) { return dice(confusion(pred, ref)); }

std::pair<double, double> sensitivity_specificity(const Confusion& c) {
  const double sens = c.tp + c.fn == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  const double spec = c.tn + c.fp == 0 ? 1.0 : static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  return {sens, spec};
}

std::pair<double, double> sensitivity_specificity(const Mask& pred, const Mask& ref) {
  return sensitivity_specificity(confusion(pred, ref));
}

Mask boundary_voxels(const Mask& m) {
  const Shape3 s = mask_shape(m);
  Mask out({s.d, s.h, s.w}, 0);
  auto fg = [&](int64_t z, int64_t y, int64_t x) {
    if (z < 0 || y < 0 || x < 0 || z >= s.d || y >= s.h || x >= s.w) return false;
    return m[(z * s.h + y) * s.w + x] != 0;
  };
#pragma omp parallel for schedule(static)
  for (int64_t z = 0; z < s.d; ++z) {
    for (int64_t y = 0; y < s.h; ++y) {
      for (int64_t x = 0; x < s.w; ++x) {
        if (!fg(z, y, x)) continue;
        const bool interior = fg(z - 1, y, x) && fg(z + 1, y, x) && fg(z, y - 1, x) && fg(z, y + 1, x) &&
                              fg(z, y, x - 1) && fg(z, y, x + 1);
        if (!interior) out[(z * s.h + y) * s.w + x] = 1;
      }
    }
  }
  return out;
}

std::vector<double> squared_edt(const Mask& features, const Spacing& spacing) {
  const Shape3 s = mask_shape(features);
  std::vector<double> g(static_cast<size_t>(s.voxels()));
  for (int64_t i = 0; i < s.voxels(); ++i) g[static_cast<size_t>(i)] = features[i] ? 0.0 : kInf;
  if (s.voxels() == 0) return g;
  for (int axis = 2; axis >= 0; --axis) edt_axis(g, s, axis, spacing[static_cast<size_t>(axis)]);
  return g;
}

double volume_diagonal(const Shape3& shape, const Spacing& spacing) {
  double acc = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double e = static_cast<double>(shape[a]) * spacing[static_cast<size_t>(a)];
    acc += e * e;
  }
  return std::sqrt(acc);
}

Hausdorff hd95(const Mask& pred, const Mask& ref, const Spacing& spacing, const HausdorffOptions& opts) {
  check_same(pred, ref);
  const Shape3 s = mask_shape(pred);
  const Mask bp = boundary_voxels(pred);
  const Mask br = boundary_voxels(ref);
  const bool ep = std::none_of(bp.span().begin(), bp.span().end(), [](uint8_t v) { return v != 0; });
  const bool er = std::none_of(br.span().begin(), br.span().end(), [](uint8_t v) { return v != 0; });
  if (ep && er) return {0.0, false};
  if (ep || er) {
    const double penalty =
        opts.penalty == HausdorffOptions::EmptyPenalty::diagonal ? volume_diagonal(s, spacing) : opts.fixed_value;
    return {penalty, true};
  }
  const auto dr = squared_edt(br, spacing);
  const auto dp = squared_edt(bp, spacing);
  std::vector<double> dist;
  for (int64_t i = 0; i < s.voxels(); ++i) {
    if (bp[i]) dist.push_back(dr[static_cast<size_t>(i)]);
    if (br[i]) dist.push_back(dp[static_cast<size_t>(i)]);
  }
  const size_t rank = static_cast<size_t>(std::ceil(0.95 * static_cast<double>(dist.size())));
  const size_t idx = std::max<size_t>(rank, 1) - 1;
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(idx), dist.end());
  return {std::sqrt(dist[idx]), false};
}

CaseMetrics evaluate_case(const std::string& case_id, const LabelVolume& pred, const LabelVolume& ref,
                          const SubregionSpec& spec, const HausdorffOptions& opts) {
  if (pred.data.shape() != ref.data.shape()) {
    throw ShapeError(case_id + ": prediction shape " + shape_str(pred.data.shape()) + " differs from reference " +
                     shape_str(ref.data.shape()));
  }
  const MultiLabelMask mp = map_labels(pred, spec);
  const MultiLabelMask mr = map_labels(ref, spec);
  const Shape3 s = ref.data.spatial();
  CaseMetrics out;
  out.case_id = case_id;
  for (size_t k = 0; k < spec.size(); ++k) {
    const Mask p = channel_slice(mp.data, static_cast<int64_t>(k), 1);
    const Mask r = channel_slice(mr.data, static_cast<int64_t>(k), 1);
    Mask p3 = p, r3 = r;
    p3.reshape({s.d, s.h, s.w});
    r3.reshape({s.d, s.h, s.w});
    const Confusion c = confusion(p3, r3);
    const auto [sens, specv] = sensitivity_specificity(c);
    const Hausdorff h = hd95(p3, r3, ref.spacing, opts);
    out.per_class.push_back({dice(c), h.value, sens, specv, h.penalized});
  }
  return out;
}

namespace {

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd r;
  if (v.empty()) return r;
  double sum = 0.0;
  for (double x : v) sum += x;
  r.mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(v.size()));
  return r;
}

double metric_of(const SubregionMetrics& m, int idx) {
  switch (idx) {
    case 0: return m.dice;
    case 1: return m.hd95;
    case 2: return m.sensitivity;
    default: return m.specificity;
  }
}

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

CohortReport aggregate(std::vector<CaseMetrics> cases, const SubregionSpec& spec, std::vector<std::string> missing) {
  CohortReport r;
  for (const auto& c : spec.classes) r.class_names.push_back(c.name);
  std::vector<int> order;
  try {
    order = spec.nesting_order();
    std::reverse(order.begin(), order.end());
  } catch (const ValidationError&) {
    for (int k = 0; k < static_cast<int>(spec.size()); ++k) order.push_back(k);
  }
  r.row_order = order;
  std::sort(cases.begin(), cases.end(), [](const auto& a, const auto& b) { return a.case_id < b.case_id; });
  std::sort(missing.begin(), missing.end());
  r.cases = std::move(cases);
  r.missing = std::move(missing);
  const size_t K = spec.size();
  r.summary.resize(K);
  for (int m = 0; m < 4; ++m) {
    double sum_means = 0.0;
    for (size_t k = 0; k < K; ++k) {
      std::vector<double> vals;
      for (const auto& c : r.cases) vals.push_back(metric_of(c.per_class[k], m));
      r.summary[k][static_cast<size_t>(m)] = mean_std(vals);
      sum_means += r.summary[k][static_cast<size_t>(m)].mean;
    }
    std::vector<double> per_case;
    for (const auto& c : r.cases) {
      double acc = 0.0;
      for (size_t k = 0; k < K; ++k) acc += metric_of(c.per_class[k], m);
      per_case.push_back(acc / static_cast<double>(K));
    }
    r.average[static_cast<size_t>(m)] = {K ? sum_means / static_cast<double>(K) : 0.0, mean_std(per_case).std};
  }
  return r;
}

std::string CohortReport::csv() const {
  std::string out = "case_id,subregion,dice,hd95,sensitivity,specificity,hd95_penalized\n";
  for (const auto& c : cases) {
    for (size_t k = 0; k < class_names.size(); ++k) {
      const auto& m = c.per_class[k];
      out += fmt::format("{},{},{:.17g},{:.17g},{:.17g},{:.17g},{}\n", c.case_id, class_names[k], m.dice, m.hd95,
                         m.sensitivity, m.specificity, m.hd95_penalized ? 1 : 0);
    }
  }
  for (const auto& id : missing) out += fmt::format("{},missing,,,,,\n", id);
  return out;
}

std::string CohortReport::table() const {
  std::string out = fmt::format("{:<8}{:>18}{:>18}{:>18}{:>18}\n", "", "Dice", "HD95", "Sensitivity", "Specificity");
  auto row = [&](const std::string& name, const std::array<MeanStd, 4>& v) {
    out += fmt::format("{:<8}", name);
    for (const auto& ms : v) out += fmt::format("{:>18}", fmt::format("{:.4f}±{:.4f}", ms.mean, ms.std));
    out += "\n";
  };
  for (int k : row_order) row(upper(class_names[static_cast<size_t>(k)]), summary[static_cast<size_t>(k)]);
  row("Avg", average);
  out += fmt::format("cases: {}\n", cases.size());
  if (!missing.empty()) {
    out += "missing predictions:";
    for (const auto& id : missing) out += " " + id;
    out += "\n";
  }
  return out;
}

std::string prediction_filename(const std::string& case_id) { return case_id + "_seg.nii.gz"; }

CohortReport evaluate_cohort(const std::string& pred_dir, const DatasetManifest& manifest, const SubregionSpec& spec,
                             const HausdorffOptions& opts) {
  std::vector<const CaseRecord*> refs;
  std::vector<std::string> missing;
  for (const auto& c : manifest.cases) {
    if (!c.label_path) continue;
    if (!std::filesystem::exists(std::filesystem::path(pred_dir) / prediction_filename(c.case_id))) {
      missing.push_back(c.case_id);
    } else {
      refs.push_back(&c);
    }
  }
  std::vector<CaseMetrics> results(refs.size());
  std::vector<std::exception_ptr> errors(refs.size());
#pragma omp parallel for schedule(dynamic)
  for (size_t i = 0; i < refs.size(); ++i) {
    try {
      const auto* c = refs[i];
      const LabelVolume ref = read_label(*c->label_path);
      const LabelVolume pred =
          read_label((std::filesystem::path(pred_dir) / prediction_filename(c->case_id)).string());
      results[i] = evaluate_case(c->case_id, pred, ref, spec, opts);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return aggregate(std::move(results), spec, std::move(missing));
}

}  // namespace autoseg
