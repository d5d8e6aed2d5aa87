#include <fstream>

#include <gtest/gtest.h>

#include "autoseg/analyzer.hpp"
#include "autoseg/config.hpp"
#include "autoseg/error.hpp"
#include "autoseg/manifest.hpp"
#include "autoseg/synthetic.hpp"
#include "autoseg/volume.hpp"
#include "test_util.hpp"

using namespace autoseg;
namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST(VolumeIo, ImageRoundTripNiftiGz) {
  const auto dir = testutil::temp_dir("io");
  MultiChannelVolume v;
  v.data = testutil::random_normal<float>({2, 5, 6, 7}, 1);
  v.spacing = {2.5, 1.25, 0.8};
  v.affine = identity_affine(v.spacing);
  v.affine[3] = -17.5;
  const std::string p = (dir / "img.nii.gz").string();
  write_volume(v, p);
  const MultiChannelVolume r = read_image(p);
  EXPECT_EQ(r.data, v.data);
  EXPECT_EQ(r.spacing, v.spacing);
  EXPECT_EQ(r.affine, v.affine);
}

TEST(VolumeIo, LabelRoundTripAllContainers) {
  const auto dir = testutil::temp_dir("io");
  LabelVolume l;
  l.data = Tensor<int32_t>({4, 3, 5});
  for (int64_t i = 0; i < l.data.numel(); ++i) l.data[i] = static_cast<int32_t>(i % 4);
  l.spacing = {1.0, 0.5, 3.0};
  l.affine = identity_affine(l.spacing);
  for (const std::string name : {"lab.nii", "lab.nii.gz", "lab.json"}) {
    const std::string p = (dir / name).string();
    write_volume(l, p);
    const LabelVolume r = read_label(p);
    EXPECT_EQ(r.data, l.data) << name;
    EXPECT_EQ(r.spacing, l.spacing) << name;
    EXPECT_EQ(r.alphabet(), (std::set<int>{0, 1, 2, 3}));
  }
}

TEST(VolumeIo, LargeLabelsSurvive) {
  const auto dir = testutil::temp_dir("io");
  LabelVolume l;
  l.data = Tensor<int32_t>({2, 2, 2}, 0);
  l.data[3] = 70000;
  write_volume(l, (dir / "big.nii.gz").string());
  EXPECT_EQ(read_label((dir / "big.nii.gz").string()).data[3], 70000);
}

TEST(VolumeIo, MissingFileIsIoError) {
  EXPECT_THROW(read_volume("/nonexistent/nowhere.nii.gz"), IoError);
}

TEST(VolumeIo, MultiChannelLabelIsShapeError) {
  const auto dir = testutil::temp_dir("io");
  write_file(dir / "bad.json",
             R"({"shape":[2,2,2,2],"dtype":"uint8","spacing":[1,1,1],"affine":[1,0,0,0,0,1,0,0,0,0,1,0,0,0,0,1]})");
  std::ofstream(dir / "bad.bin", std::ios::binary) << std::string(16, '\1');
  EXPECT_THROW(read_volume((dir / "bad.json").string()), ShapeError);
}

TEST(VolumeIo, WriteIntoMissingDirectoryFails) {
  LabelVolume l;
  l.data = Tensor<int32_t>({2, 2, 2}, 0);
  EXPECT_THROW(write_volume(l, "/nonexistent/dir/x.nii.gz"), IoError);
}

TEST(Manifest, ParsesNullModalitiesAndClasses) {
  const auto dir = testutil::temp_dir("manifest");
  for (const char* f : {"a_t1.nii", "a_t2.nii", "a_seg.nii", "b_t1.nii", "b_seg.nii"}) write_file(dir / f, "x");
  const std::string text = R"({"training": [
    {"image": ["a_t1.nii", "a_t2.nii"], "label": "a_seg.nii", "fold": 0},
    {"image": ["b_t1.nii", null], "label": "b_seg.nii", "fold": 1, "classes": ["et"], "case_id": "bee"}
  ]})";
  const DatasetManifest m = parse_manifest(text, dir.string(), SubregionSpec::brats());
  ASSERT_EQ(m.cases.size(), 2u);
  EXPECT_EQ(m.num_folds, 2);
  EXPECT_EQ(m.cases[0].case_id, "a_seg");
  EXPECT_EQ(m.cases[0].available_classes, (std::vector<uint8_t>{1, 1, 1}));
  EXPECT_EQ(m.cases[1].case_id, "bee");
  EXPECT_FALSE(m.cases[1].modality_present(1));
  EXPECT_EQ(m.cases[1].available_classes, (std::vector<uint8_t>{0, 0, 1}));
  EXPECT_EQ(m.fold_cases(1, true).size(), 1u);
  EXPECT_EQ(m.fold_cases(1, false).size(), 1u);
}

TEST(Manifest, ErrorsNameTheProblem) {
  const auto dir = testutil::temp_dir("manifest");
  try {
    parse_manifest("{\"training\": [\n{\"image\": [\"x\"], \"fold\": 0,,}]}", dir.string(), SubregionSpec::brats());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_manifest(R"({"training": [{"image": ["x"], "label": null}]})", dir.string(),
                              SubregionSpec::brats()),
               ValidationError);
  try {
    parse_manifest(R"({"training": [{"image": ["missing.nii"], "label": null, "fold": 0, "case_id": "c7"}]})",
                   dir.string(), SubregionSpec::brats());
    FAIL() << "expected ManifestError";
  } catch (const ManifestError& e) {
    EXPECT_NE(std::string(e.what()).find("c7"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("missing.nii"), std::string::npos);
  }
}

TEST(Subregion, BratsSpecNestsAndValidates) {
  const SubregionSpec s = SubregionSpec::brats();
  EXPECT_NO_THROW(s.validate());
  EXPECT_EQ(s.nesting_order(), (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(s.label_alphabet(), (std::set<int>{0, 1, 2, 3}));
  EXPECT_TRUE(s.overlapping());
  SubregionSpec soft = s;
  soft.sigmoid = false;
  EXPECT_THROW(soft.validate(), ValidationError);
  SubregionSpec dup = s;
  dup.classes[1].name = "wt";
  EXPECT_THROW(dup.validate(), ValidationError);
  SubregionSpec crossing{{{"a", {1, 2}}, {"b", {2, 3}}}, true};
  EXPECT_THROW(crossing.nesting_order(), ValidationError);
}

TEST(UserInput, TwoFileStyleYaml) {
  const std::string yaml = R"(# This is the YAML file "input.yaml"
modality: MRI
datalist: "./dataset.json"
dataroot: "/data/brats23"

class_names:
- { "name": "wt", "index": [1,2,3] }
- { "name": "tc", "index": [1,3] }
- { "name": "et", "index": [3] }
sigmoid : true
)";
  const UserInput in = parse_user_input(yaml, "/base");
  EXPECT_EQ(in.modality, "MRI");
  EXPECT_EQ(in.subregions, SubregionSpec::brats());
  EXPECT_EQ(fs::path(in.datalist).lexically_normal(), fs::path("/base/dataset.json"));
  EXPECT_EQ(in.dataroot, "/data/brats23");
}

TEST(UserInput, MissingKeysRejected) {
  EXPECT_THROW(parse_user_input("modality: MRI\n"), ValidationError);
  EXPECT_ANY_THROW(parse_user_input("modality: [unclosed\n"));
}

TEST(Config, YamlRoundTripAndOverrides) {
  SegConfig c;
  c.epochs = 7;
  c.learning_rate = 1e-3;
  c.augmentation.channel_dropout = ChannelDropout{2, 0.5};
  const SegConfig r = config_from_yaml(to_yaml(c));
  EXPECT_EQ(r, c);
  const SegConfig def;
  EXPECT_EQ(def.learning_rate, 2e-4);
  EXPECT_EQ(def.weight_decay, 1e-5);
  EXPECT_EQ(def.epochs, 600);
  EXPECT_EQ(def.batch_size_per_device, 1);
  YAML::Node n = YAML::Load("num_levels: 3\nmystery_key: 5\n");
  const SegConfig o = config_from_yaml(n, def);
  EXPECT_EQ(o.num_levels, 3);
  EXPECT_EQ(o.blocks_down.size(), 3u);
  EXPECT_EQ(o.passthrough.at("mystery_key"), "5");
}

TEST(Analyzer, StatsAndConfigOnSynthetic) {
  const auto dir = testutil::temp_dir("analyze");
  SyntheticOptions o;
  o.metastasis_fraction = 0.5;
  o.num_folds = 2;
  const std::string dl = make_synthetic_dataset(dir.string(), 4, {16, 24, 32}, 3, o);
  const DatasetManifest m = load_manifest(dl, dir.string());
  const DatasetStats st = analyze(m);
  ASSERT_EQ(st.modalities.size(), 4u);
  EXPECT_EQ(st.modalities[kT2Channel].absent_cases, 2);
  EXPECT_EQ(st.modalities[0].absent_cases, 0);
  for (const auto& ms : st.modalities) {
    EXPECT_TRUE(std::is_sorted(ms.percentiles.begin(), ms.percentiles.end()));
    EXPECT_GT(ms.std, 0.0);
  }
  EXPECT_EQ(st.median_shape, (Shape3{16, 24, 32}));
  EXPECT_EQ(st.label_alphabet, (std::set<int>{0, 1, 2, 3}));
  double frac = 0.0;
  for (const auto& [k, v] : st.label_fractions) frac += v;
  EXPECT_NEAR(frac, 1.0, 1e-12);

  UserInput in;
  in.modality = "MRI";
  in.subregions = SubregionSpec::brats();
  const SegConfig cfg = generate_config(st, in);
  EXPECT_EQ(cfg.patch_size, (std::array<int64_t, 3>{16, 16, 32}));
  ASSERT_TRUE(cfg.augmentation.channel_dropout.has_value());
  EXPECT_EQ(cfg.augmentation.channel_dropout->channel, kT2Channel);
  EXPECT_EQ(cfg.augmentation.channel_dropout->prob, 0.5);
  EXPECT_EQ(cfg.num_folds, 2);
}

TEST(Analyzer, FoldAssignmentBalancedAndSeeded) {
  std::vector<std::string> ids;
  for (int i = 0; i < 23; ++i) ids.push_back("id" + std::to_string(i));
  const auto a = assign_folds(ids, 5, 11);
  EXPECT_EQ(a, assign_folds(ids, 5, 11));
  std::vector<int> counts(5, 0);
  for (int f : a) ++counts[f];
  EXPECT_LE(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()), 1);
  std::vector<std::string> rev(ids.rbegin(), ids.rend());
  const auto b = assign_folds(rev, 5, 11);
  for (size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(a[i], b[ids.size() - 1 - i]);
  EXPECT_THROW(assign_folds({"a", "b"}, 3, 0), ValidationError);
  EXPECT_THROW(assign_folds({"a", "a", "b"}, 2, 0), ValidationError);
}

TEST(Synthetic, DeterministicAndNested) {
  const auto a = testutil::temp_dir("synth");
  const auto b = testutil::temp_dir("synth");
  SyntheticOptions o;
  o.metastasis_fraction = 0.5;
  make_synthetic_dataset(a.string(), 10, {32, 32, 32}, 9, o);
  make_synthetic_dataset(b.string(), 10, {32, 32, 32}, 9, o);
  for (const auto& e : fs::directory_iterator(a)) {
    std::ifstream fa(e.path(), std::ios::binary), fb(b / e.path().filename(), std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
    EXPECT_EQ(sa, sb) << e.path();
  }
  const DatasetManifest m = load_manifest((a / "dataset.json").string(), a.string());
  EXPECT_EQ(m.cases.size(), 10u);
  EXPECT_EQ(m.num_folds, 5);
  for (int f = 0; f < 5; ++f) EXPECT_EQ(m.fold_cases(f, true).size(), 2u);
  int meta = 0;
  for (const auto& c : m.cases) {
    if (!c.modality_present(kT2Channel)) {
      ++meta;
      EXPECT_EQ(c.available_classes, (std::vector<uint8_t>{0, 0, 1}));
    }
  }
  EXPECT_EQ(meta, 5);
}
