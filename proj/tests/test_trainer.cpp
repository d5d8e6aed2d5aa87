#include <cmath>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "autoseg/checkpoint.hpp"
#include "autoseg/error.hpp"
#include "autoseg/metrics.hpp"
#include "autoseg/optim.hpp"
#include "autoseg/synthetic.hpp"
#include "autoseg/trainer.hpp"
#include "test_util.hpp"

using namespace autoseg;
namespace fs = std::filesystem;

namespace {

SegConfig tiny_config(int epochs = 2) {
  SegConfig c;
  c.patch_size = {16, 16, 16};
  c.init_filters = 4;
  c.num_levels = 3;
  c.blocks_down = {1, 1, 1};
  c.blocks_up = {1, 1};
  c.deep_supervision_levels = 2;
  c.epochs = epochs;
  c.validation_interval = 1;
  c.num_folds = 2;
  c.learning_rate = 1e-3;
  return c;
}

std::string tiny_dataset(const fs::path& dir, int cases, double meta = 0.0) {
  SyntheticOptions o;
  o.num_folds = 2;
  o.metastasis_fraction = meta;
  return make_synthetic_dataset(dir.string(), cases, {16, 16, 16}, 1, o);
}

PreparedCase stub_case(const Mask& mask) {
  PreparedCase pc;
  pc.case_id = "stub";
  pc.image.data = Tensorf({1, mask.dim(1), mask.dim(2), mask.dim(3)}, 1.0f);
  pc.mask = mask;
  pc.available.assign(static_cast<size_t>(mask.dim(0)), 1);
  return pc;
}

}  // namespace

TEST(CosineLr, EndpointsAndMonotone) {
  EXPECT_EQ(cosine_lr(2e-4, 0, 600), 2e-4);
  EXPECT_EQ(cosine_lr(2e-4, 600, 600), 0.0);
  EXPECT_NEAR(cosine_lr(2e-4, 300, 600), 1e-4, 1e-12);
  double prev = 1.0;
  for (int e = 0; e <= 600; ++e) {
    const double lr = cosine_lr(2e-4, e, 600);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(AdamW, DecoupledDecayWithZeroGradient) {
  Parameter p{"p", Tensorf({3}, std::vector<float>{1.0f, -2.0f, 0.5f}), Tensorf({3}, 0.0f)};
  AdamW opt({&p}, 1e-5);
  const double lr = 0.1;
  std::vector<double> expect{1.0, -2.0, 0.5};
  for (int s = 0; s < 5; ++s) {
    opt.step(lr);
    for (size_t i = 0; i < 3; ++i) {
      expect[i] = static_cast<float>(expect[i] * (1.0 - lr * 1e-5));
      EXPECT_EQ(p.value[static_cast<int64_t>(i)], static_cast<float>(expect[i]));
    }
  }
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  Parameter p{"p", Tensorf({2}, 0.0f), Tensorf({2}, std::vector<float>{3.0f, -0.01f})};
  AdamW opt({&p}, 0.0);
  opt.step(0.01);
  EXPECT_NEAR(p.value[0], -0.01, 1e-7);
  EXPECT_NEAR(p.value[1], 0.01, 1e-6);
}

TEST(Tracker, ArgmaxWithEarlierTie) {
  CheckpointTracker t({"wt", "tc", "et"});
  auto v = [](double wt) {
    ValidationResult r;
    r.dice = {wt, 0.5, 0.5};
    r.counts = {1, 1, 1};
    r.dice_avg = (wt + 1.0) / 3.0;
    return r;
  };
  t.update(0, v(0.5));
  t.update(5, v(0.7));
  t.update(10, v(0.6));
  t.update(15, v(0.7));
  EXPECT_EQ(t.best_epoch("best_wt"), 5);
  EXPECT_EQ(t.best_value("best_wt"), 0.7);
  EXPECT_EQ(t.best_epoch("best_tc"), 0);
  EXPECT_THROW(t.best_epoch("best_xx"), ValidationError);
}

TEST(Validate, PerfectZeroAndHalfOverlap) {
  Mask m({3, 4, 4, 4}, 0);
  for (int64_t i = 0; i < 16; ++i) m[i] = 1;            // wt
  for (int64_t i = 64; i < 72; ++i) m[i] = 1;           // tc
  for (int64_t i = 128; i < 132; ++i) m[i] = 1;         // et
  const std::vector<PreparedCase> cases{stub_case(m)};
  auto perfect = [&](const Tensorf&) {
    Tensorf p(m.shape());
    for (int64_t i = 0; i < p.numel(); ++i) p[i] = static_cast<float>(testutil::sigmoid(m[i] ? 40 : -40));
    return p;
  };
  const ValidationResult a = validate(perfect, cases, 0.5);
  EXPECT_EQ(a.dice, (std::vector<double>{1, 1, 1}));
  EXPECT_EQ(a.dice_avg, 1.0);
  auto zero = [&](const Tensorf&) { return Tensorf(m.shape(), 0.5f); };
  EXPECT_EQ(validate(zero, cases, 0.5).dice, (std::vector<double>{0, 0, 0}));
  auto half = [&](const Tensorf&) {
    Tensorf p(m.shape(), 0.0f);
    for (int64_t i = 8; i < 24; ++i) p[i] = 1.0f;  // |A|=16, |B|=16, overlap 8
    return p;
  };
  EXPECT_DOUBLE_EQ(validate(half, cases, 0.5).dice[0], 2.0 * 8 / 32);

  std::vector<PreparedCase> with_unlabelled = cases;
  with_unlabelled.push_back(PreparedCase{"nolabel", {}, {}, {0, 0, 0}, {}});
  const ValidationResult s = validate(perfect, with_unlabelled, 0.5);
  EXPECT_EQ(s.skipped, (std::vector<std::string>{"nolabel"}));
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const auto dir = testutil::temp_dir("ckpt");
  NetworkSpec spec;
  spec.init_filters = 4;
  spec.num_levels = 3;
  spec.blocks_down = {1, 1, 1};
  spec.blocks_up = {1, 1};
  spec.deep_supervision_levels = 2;
  SegResNet net(spec, 9);
  const Tensorf x = testutil::random_normal<float>({1, 4, 8, 8, 8}, 1);
  net.forward(x, true);  // moves running stats off their defaults
  const CheckpointMeta meta{spec, 1, 3, "best_avg", {"wt", "tc", "et"}, {{"dice_avg", 0.25}}};
  const std::string p = (dir / checkpoint_filename("best_avg", 1)).string();
  EXPECT_EQ(fs::path(p).filename(), "model_best_avg_fold1.ckpt");
  save_checkpoint(p, net, meta);
  LoadedModel m = load_checkpoint(p);
  EXPECT_EQ(m.meta.epoch, 3);
  EXPECT_EQ(m.meta.metrics.at("dice_avg"), 0.25);
  EXPECT_EQ(m.net->forward(x, false).logits, net.forward(x, false).logits);
  EXPECT_THROW(load_checkpoint((dir / "absent.ckpt").string()), IoError);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  EXPECT_THROW(load_checkpoint((dir / "junk.ckpt").string()), ParseError);
}

TEST(TrainFold, BookkeepingFilesAndDeterminism) {
  const auto data = testutil::temp_dir("trainfold");
  const DatasetManifest m = load_manifest(tiny_dataset(data, 4), data.string());
  const SegConfig cfg = tiny_config(2);
  const auto out_a = testutil::temp_dir("trainfold_a");
  const auto out_b = testutil::temp_dir("trainfold_b");
  const FoldResult a = train_fold(m, cfg, 0, {out_a.string(), std::nullopt, {}});
  const FoldResult b = train_fold(m, cfg, 0, {out_b.string(), std::nullopt, {}});
  EXPECT_GE(a.records.size(), 5u);
  std::set<std::string> tags;
  for (const auto& r : a.records) {
    tags.insert(r.tag);
    EXPECT_TRUE(fs::exists(r.path)) << r.path;
    double mean = 0;
    for (double d : r.dice) mean += d;
    EXPECT_NEAR(r.dice_avg, mean / 3.0, 1e-9);
  }
  EXPECT_EQ(tags, (std::set<std::string>{"best_avg", "best_wt", "best_tc", "best_et", "last"}));
  EXPECT_EQ(a.loss_trajectory, b.loss_trajectory);
  EXPECT_EQ(a.loss_trajectory.size(), 4u);  // 2 training cases x 2 epochs
  for (size_t i = 0; i < a.records.size(); ++i) EXPECT_EQ(a.records[i].dice, b.records[i].dice);

  // No validation event beats a stored best.
  for (const auto& r : a.records) {
    if (r.tag == "best_avg") {
      for (const auto& h : a.history) {
        if (h.validation) EXPECT_LE(h.validation->dice_avg, r.dice_avg);
      }
    }
  }

  // Saved metrics reproduce in eval mode.
  const CheckpointRecord& best = a.records.front();
  LoadedModel lm = load_checkpoint(best.path);
  const auto val = prepare_cases(m.fold_cases(0, true), cfg.subregions, cfg.in_channels);
  EXPECT_EQ(validate(*lm.net, val, cfg).dice, best.dice);

  // Fine-tune from the saved checkpoint restarts the epoch counter.
  const auto out_c = testutil::temp_dir("trainfold_c");
  const FoldResult c = train_fold(m, tiny_config(1), 0, {out_c.string(), best.path, {}});
  EXPECT_EQ(c.history.front().epoch, 0);
  EXPECT_EQ(c.history.front().lr, tiny_config(1).learning_rate);
  EXPECT_THROW(train_fold(m, cfg, 0, {out_c.string(), (out_c / "missing.ckpt").string(), {}}), IoError);
  SegConfig other = tiny_config(1);
  other.init_filters = 8;
  EXPECT_THROW(train_fold(m, other, 0, {out_c.string(), best.path, {}}), ValidationError);
  EXPECT_THROW(train_fold(m, cfg, 5, {out_c.string(), std::nullopt, {}}), ValidationError);
}

TEST(TrainAllFolds, RegistryAndReport) {
  const auto data = testutil::temp_dir("allfolds");
  const DatasetManifest m = load_manifest(tiny_dataset(data, 4, 0.5), data.string());
  SegConfig cfg = tiny_config(1);
  cfg.augmentation.channel_dropout = ChannelDropout{kT2Channel, 0.5};
  const auto root = testutil::temp_dir("allfolds_ckpt");
  const CrossValidation cv = train_all_folds(m, cfg, root.string(), 2);
  EXPECT_EQ(cv.fold_dice.size(), 2u);
  EXPECT_TRUE(fs::exists(root / "registry.json"));
  const Registry reg = Registry::load((root / "registry.json").string());
  EXPECT_EQ(reg.entries, cv.registry.entries);
  EXPECT_EQ(reg.with_tag("best_avg").size(), 2u);
  for (const auto& e : reg.entries) EXPECT_TRUE(fs::exists(root / e.path)) << e.path;
  std::ifstream csv(root / "cv_report.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "Fold 1,Fold 2,Average");
  EXPECT_NEAR(cv.average, (cv.fold_dice[0] + cv.fold_dice[1]) / 2, 1e-15);
  SegConfig wrong = cfg;
  wrong.num_folds = 5;
  EXPECT_THROW(train_all_folds(m, wrong, root.string()), ValidationError);
}
