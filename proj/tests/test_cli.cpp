#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "autoseg/error.hpp"
#include "autoseg/pipeline.hpp"
#include "test_util.hpp"

using namespace autoseg;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + AUTOSEG_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kTinyOverrides =
    "epochs: 1\n"
    "num_levels: 3\n"
    "blocks_down: [1, 1, 1]\n"
    "blocks_up: [1, 1]\n"
    "deep_supervision_levels: 2\n"
    "init_filters: 4\n";

}  // namespace

TEST(Stages, ParseInDependencyOrder) {
  EXPECT_EQ(parse_stages("evaluate,train"), (std::vector<Stage>{Stage::train, Stage::evaluate}));
  EXPECT_EQ(parse_stages("analyze"), (std::vector<Stage>{Stage::analyze}));
  EXPECT_EQ(stage_name(Stage::ensemble), "ensemble");
  EXPECT_THROW(parse_stages("analyze,bogus"), ValidationError);
}

TEST(Pipeline, SkipsCompletedStagesAndStopsOnFailure) {
  const auto dir = testutil::temp_dir("pipe");
  std::ofstream(dir / "input.yaml") << "modality: MRI\ndatalist: d.json\ndataroot: .\n"
                                       "class_names:\n- {name: wt, index: [1,2,3]}\nsigmoid: true\n";
  RunPlan plan;
  plan.input = (dir / "input.yaml").string();
  plan.work_dir = (dir / "work").string();
  std::vector<std::string> calls, log;
  auto make = [&](bool fail) {
    Pipeline p(plan, [&](const std::string& s) { log.push_back(s); });
    for (Stage s : all_stages()) {
      p.set_handler(s, [&, s, fail](StageContext& ctx) {
        calls.push_back(stage_name(s));
        if (fail && s == Stage::ensemble) throw Error("boom");
        const std::string out = (fs::path(ctx.plan.work_dir) / (stage_name(s) + ".txt")).string();
        std::ofstream(out) << "x";
        ctx.outputs = {out};
      });
    }
    return p;
  };
  EXPECT_EQ(make(true).run(), 1);
  EXPECT_EQ(calls, (std::vector<std::string>{"analyze", "configure", "train", "ensemble"}));
  EXPECT_NE(std::find(log.begin(), log.end(), "stage 'ensemble' failed: boom"), log.end());
  calls.clear();
  log.clear();
  EXPECT_EQ(make(false).run(), 0);
  EXPECT_EQ(calls, (std::vector<std::string>{"ensemble", "infer", "evaluate"}));
  EXPECT_NE(std::find(log.begin(), log.end(), "stage 'train': skipped (already complete)"), log.end());
  const auto manifest = nlohmann::json::parse(slurp(dir / "work" / "run_manifest.json"));
  EXPECT_TRUE(manifest["stages"]["evaluate"]["completed"].get<bool>());
  EXPECT_EQ(manifest["device"], "cpu");

  // A new seed invalidates the stamps.
  calls.clear();
  plan.seed = 7;
  EXPECT_EQ(make(false).run(), 0);
  EXPECT_EQ(calls.size(), all_stages().size());
}

TEST(Cli, RejectsBadInput) {
  const auto dir = testutil::temp_dir("cli_bad");
  ASSERT_EQ(run_cli("synth --out \"" + dir.string() + "\" --cases 4 --shape 16 --folds 2", dir / "synth.log"), 0);
  const std::string input = (dir / "input.yaml").string();
  EXPECT_EQ(run_cli("run --input \"" + input + "\" --algos dints --work-dir \"" + (dir / "w").string() + "\"",
                    dir / "algos.log"),
            2);
  EXPECT_NE(slurp(dir / "algos.log").find("unsupported algorithm"), std::string::npos);
  std::ofstream(dir / "broken.yaml") << "modality: [unclosed\n";
  EXPECT_EQ(run_cli("run --input \"" + (dir / "broken.yaml").string() + "\"", dir / "yaml.log"), 2);
  EXPECT_EQ(run_cli("run", dir / "noargs.log"), 2);
  EXPECT_EQ(run_cli("run --input \"" + (dir / "absent.yaml").string() + "\"", dir / "absent.log"), 2);
}

TEST(Cli, EndToEndRunAndResume) {
  const auto dir = testutil::temp_dir("cli_e2e");
  ASSERT_EQ(run_cli("synth --out \"" + dir.string() + "\" --cases 4 --shape 16 --folds 2 --metastasis-fraction 0.25",
                    dir / "synth.log"),
            0);
  std::ofstream(dir / "input.yaml", std::ios::app) << kTinyOverrides;
  const std::string work = (dir / "work").string();
  const std::string args = "run --input \"" + (dir / "input.yaml").string() + "\" --work-dir \"" + work + "\" --seed 3";
  ASSERT_EQ(run_cli(args, dir / "run1.log"), 0) << slurp(dir / "run1.log");
  for (const char* f : {"config/datastats.json", "config/segresnet.yaml", "config/ensemble.json", "splits/folds.json",
                        "ckpt/registry.json", "ckpt/cv_report.csv", "reports/metrics.csv", "reports/metrics.txt",
                        "run_manifest.json"}) {
    EXPECT_TRUE(fs::exists(fs::path(work) / f)) << f;
  }
  int preds = 0;
  for (const auto& e : fs::directory_iterator(fs::path(work) / "preds")) preds += e.path().string().ends_with("_seg.nii.gz");
  EXPECT_EQ(preds, 4);
  const std::string cfg = slurp(fs::path(work) / "config/segresnet.yaml");
  EXPECT_NE(cfg.find("channel_dropout"), std::string::npos);  // a null T2 entry exists

  ASSERT_EQ(run_cli(args, dir / "run2.log"), 0);
  const std::string log2 = slurp(dir / "run2.log");
  for (Stage s : all_stages()) {
    EXPECT_NE(log2.find("stage '" + stage_name(s) + "': skipped (already complete)"), std::string::npos);
  }

  // Evaluate with a missing prediction reports failure.
  fs::remove(fs::path(work) / "preds" / "case_000_seg.nii.gz");
  EXPECT_EQ(run_cli("evaluate --input \"" + (dir / "input.yaml").string() + "\" --pred-dir \"" + work + "/preds\"",
                    dir / "eval.log"),
            1);
  EXPECT_NE(slurp(dir / "eval.log").find("case_000"), std::string::npos);
}
