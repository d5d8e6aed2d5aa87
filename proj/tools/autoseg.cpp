#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "autoseg/ensemble.hpp"
#include "autoseg/error.hpp"
#include "autoseg/metrics.hpp"
#include "autoseg/pipeline.hpp"
#include "autoseg/synthetic.hpp"
#include "autoseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace autoseg;

namespace {

void log_line(const std::string& s) { std::cout << s << std::endl; }

// Exit 2: bad user input (YAML, datalist references, unsupported algorithm).
int check_input(const std::string& path, const std::string& algos) {
  if (algos != "segresnet") {
    std::cerr << "error: unsupported algorithm '" << algos << "' (only segresnet is available)\n";
    return 2;
  }
  try {
    load_user_input(path);
  } catch (const std::exception& e) {
    std::cerr << "error: invalid input " << path << ": " << e.what() << "\n";
    return 2;
  }
  return 0;
}

Shape3 parse_shape(const std::string& s) {
  std::vector<int64_t> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(std::stoll(item));
  if (v.size() == 1) return {v[0], v[0], v[0]};
  if (v.size() != 3) throw ValidationError("shape must be N or D,H,W");
  return {v[0], v[1], v[2]};
}

void write_synthetic_input(const std::string& dir) {
  std::ofstream out(fs::path(dir) / "input.yaml");
  out << "modality: MRI\n"
         "datalist: \"./dataset.json\"\n"
         "dataroot: \".\"\n"
         "\n"
         "class_names:\n"
         "- { \"name\": \"wt\", \"index\": [1,2,3] }\n"
         "- { \"name\": \"tc\", \"index\": [1,3] }\n"
         "- { \"name\": \"et\", \"index\": [3] }\n"
         "sigmoid : true\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SegResNet multi-label brain tumour segmentation pipeline"};
  app.require_subcommand(1);

  RunPlan plan;
  std::string algos = "segresnet";
  std::string stages;
  auto* run = app.add_subcommand("run", "run the full pipeline (or --stages) into the work directory");
  run->add_option("--input", plan.input, "input.yaml")->required();
  run->add_option("--algos", algos, "algorithm (segresnet)");
  run->add_option("--work-dir", plan.work_dir, "work directory");
  run->add_option("--seed", plan.seed, "global seed");
  run->add_option("--jobs", plan.jobs, "folds trained concurrently")->check(CLI::PositiveNumber);
  run->add_option("--stages", stages, "comma-separated subset of analyze,configure,train,ensemble,infer,evaluate");

  auto* an = app.add_subcommand("analyze", "dataset statistics and fold splits");
  an->add_option("--input", plan.input, "input.yaml")->required();
  an->add_option("--work-dir", plan.work_dir, "work directory");

  int fold = 0;
  std::string init_ckpt;
  auto* tr = app.add_subcommand("train", "train one fold using the resolved config");
  tr->add_option("--input", plan.input, "input.yaml")->required();
  tr->add_option("--work-dir", plan.work_dir, "work directory");
  tr->add_option("--fold", fold, "held-out fold")->required();
  tr->add_option("--init-checkpoint", init_ckpt, "fine-tune from this checkpoint");

  std::string ens_path, out_dir;
  auto* inf = app.add_subcommand("infer", "ensemble inference over every datalist case");
  inf->add_option("--input", plan.input, "input.yaml")->required();
  inf->add_option("--work-dir", plan.work_dir, "work directory");
  inf->add_option("--ensemble", ens_path, "ensemble spec JSON (default: work-dir config/ensemble.json)");
  inf->add_option("--out", out_dir, "prediction directory (default: work-dir preds/)");

  std::string pred_dir;
  auto* ev = app.add_subcommand("evaluate", "score predictions against the datalist labels");
  ev->add_option("--input", plan.input, "input.yaml")->required();
  ev->add_option("--pred-dir", pred_dir, "directory of <case_id>_seg.nii.gz")->required();
  ev->add_option("--out", out_dir, "report directory");

  std::string synth_out, shape = "32";
  int cases = 10, folds = 5;
  uint64_t synth_seed = 0;
  double meta_frac = 0.0;
  auto* sy = app.add_subcommand("synth", "write a synthetic dataset with dataset.json and input.yaml");
  sy->add_option("--out", synth_out, "output directory")->required();
  sy->add_option("--cases", cases, "number of cases")->check(CLI::PositiveNumber);
  sy->add_option("--shape", shape, "N or D,H,W");
  sy->add_option("--seed", synth_seed, "seed");
  sy->add_option("--folds", folds, "number of folds");
  sy->add_option("--metastasis-fraction", meta_frac, "fraction of cases with null T2 and ET-only labels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    resolve_device(log_line);
    if (*sy) {
      SyntheticOptions o;
      o.metastasis_fraction = meta_frac;
      o.num_folds = folds;
      const std::string p = make_synthetic_dataset(synth_out, cases, parse_shape(shape), synth_seed, o);
      write_synthetic_input(synth_out);
      log_line("wrote " + p);
      return 0;
    }
    if (*run || *an) {
      if (int rc = check_input(plan.input, algos)) return rc;
      if (*an) {
        plan.stages = {Stage::analyze};
      } else if (!stages.empty()) {
        plan.stages = parse_stages(stages);
      }
      return Pipeline(plan, log_line).run();
    }
    if (int rc = check_input(plan.input, "segresnet")) return rc;
    StageContext ctx;
    ctx.plan = plan;
    ctx.layout.root = plan.work_dir;
    ctx.input = load_user_input(plan.input);
    ctx.log = log_line;
    if (*tr) {
      const SegConfig cfg = ctx.config();
      TrainOptions o;
      o.out_dir = (fs::path(ctx.layout.ckpt_dir()) / fmt::format("fold{}", fold)).string();
      o.log = log_line;
      if (!init_ckpt.empty()) o.init_checkpoint = init_ckpt;
      const FoldResult r = train_fold(ctx.manifest(), cfg, fold, o);
      for (const auto& rec : r.records) log_line(fmt::format("{} epoch {} dice_avg {:.4f} -> {}", rec.tag, rec.epoch, rec.dice_avg, rec.path));
      return 0;
    }
    if (*inf) {
      const SegConfig cfg = ctx.config();
      EnsemblePredictor pred(EnsembleSpec::load(ens_path.empty() ? ctx.layout.ensemble_spec() : ens_path),
                             cfg.subregions);
      std::vector<const CaseRecord*> recs;
      for (const auto& c : ctx.manifest().cases) recs.push_back(&c);
      const auto written = infer_cases(pred, recs, cfg.in_channels, out_dir.empty() ? ctx.layout.preds_dir() : out_dir);
      log_line(fmt::format("wrote {} predictions", written.size()));
      return 0;
    }
    if (*ev) {
      const CohortReport rep = evaluate_cohort(pred_dir, ctx.manifest(), ctx.input.subregions);
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream(fs::path(out_dir) / "metrics.csv") << rep.csv();
        std::ofstream(fs::path(out_dir) / "metrics.txt") << rep.table();
      }
      std::cout << rep.table();
      return rep.missing.empty() ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
