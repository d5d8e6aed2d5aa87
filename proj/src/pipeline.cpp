#include "autoseg/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "autoseg/ensemble.hpp"
#include "autoseg/error.hpp"
#include "autoseg/metrics.hpp"
#include "autoseg/rng.hpp"
#include "autoseg/trainer.hpp"

namespace fs = std::filesystem;

namespace autoseg {

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> s{Stage::analyze, Stage::configure, Stage::train,
                                    Stage::ensemble, Stage::infer,     Stage::evaluate};
  return s;
}

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::analyze: return "analyze";
    case Stage::configure: return "configure";
    case Stage::train: return "train";
    case Stage::ensemble: return "ensemble";
    case Stage::infer: return "infer";
    case Stage::evaluate: return "evaluate";
  }
  return "?";
}

Stage stage_from_name(const std::string& name) {
  for (Stage s : all_stages()) {
    if (stage_name(s) == name) return s;
  }
  throw ValidationError("unknown stage '" + name + "'");
}

std::vector<Stage> parse_stages(const std::string& list) {
  std::vector<Stage> picked;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    const Stage s = stage_from_name(item);
    if (std::find(picked.begin(), picked.end(), s) == picked.end()) picked.push_back(s);
  }
  if (picked.empty()) throw ValidationError("no stages selected");
  std::vector<Stage> out;
  for (Stage s : all_stages()) {
    if (std::find(picked.begin(), picked.end(), s) != picked.end()) out.push_back(s);
  }
  return out;
}

std::string WorkLayout::config_dir() const { return (fs::path(root) / "config").string(); }
std::string WorkLayout::splits_dir() const { return (fs::path(root) / "splits").string(); }
std::string WorkLayout::ckpt_dir() const { return (fs::path(root) / "ckpt").string(); }
std::string WorkLayout::preds_dir() const { return (fs::path(root) / "preds").string(); }
std::string WorkLayout::reports_dir() const { return (fs::path(root) / "reports").string(); }
std::string WorkLayout::run_manifest() const { return (fs::path(root) / "run_manifest.json").string(); }
std::string WorkLayout::datastats() const { return (fs::path(config_dir()) / "datastats.json").string(); }
std::string WorkLayout::config_file() const { return (fs::path(config_dir()) / "segresnet.yaml").string(); }
std::string WorkLayout::folds_file() const { return (fs::path(splits_dir()) / "folds.json").string(); }
std::string WorkLayout::registry() const { return (fs::path(ckpt_dir()) / "registry.json").string(); }
std::string WorkLayout::ensemble_spec() const { return (fs::path(config_dir()) / "ensemble.json").string(); }

const DatasetManifest& StageContext::manifest() {
  if (!manifest_) manifest_ = load_manifest(input.datalist, input.dataroot, input.subregions);
  return *manifest_;
}

SegConfig StageContext::config() const {
  if (!fs::exists(layout.config_file())) {
    throw IoError("missing " + layout.config_file() + "; run the configure stage first");
  }
  return load_config(layout.config_file());
}

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << text;
}

void analyze_stage(StageContext& ctx) {
  fs::create_directories(ctx.layout.config_dir());
  fs::create_directories(ctx.layout.splits_dir());
  const DatasetManifest& m = ctx.manifest();
  m.validate();
  const DatasetStats st = analyze(m);
  write_text(ctx.layout.datastats(), to_json(st).dump(2) + "\n");
  nlohmann::json folds = nlohmann::json::object();
  for (const auto& c : m.cases) folds[c.case_id] = c.fold;
  write_text(ctx.layout.folds_file(), nlohmann::json{{"num_folds", m.num_folds}, {"folds", folds}}.dump(2) + "\n");
  ctx.outputs = {ctx.layout.datastats(), ctx.layout.folds_file()};
}

DatasetStats stats_from_json(const nlohmann::json& j) {
  DatasetStats st;
  st.modality = j.at("modality").get<std::string>();
  st.num_folds = j.at("num_folds").get<int>();
  const auto ms = j.at("median_shape").get<std::vector<int64_t>>();
  st.median_shape = {ms.at(0), ms.at(1), ms.at(2)};
  for (const auto& m : j.at("modalities")) {
    IntensityStats is;
    is.absent_cases = m.at("absent_cases").get<int64_t>();
    st.modalities.push_back(is);
  }
  return st;
}

void configure_stage(StageContext& ctx) {
  if (!fs::exists(ctx.layout.datastats())) throw IoError("missing " + ctx.layout.datastats());
  std::ifstream in(ctx.layout.datastats());
  const DatasetStats st = stats_from_json(nlohmann::json::parse(in));
  SegConfig cfg = generate_config(st, ctx.input);
  cfg.seed = ctx.plan.seed;
  cfg.network_seed = ctx.plan.seed;
  cfg.validate();
  fs::create_directories(ctx.layout.config_dir());
  save_config(cfg, ctx.layout.config_file());
  ctx.outputs = {ctx.layout.config_file()};
}

void train_stage(StageContext& ctx) {
  const SegConfig cfg = ctx.config();
  const CrossValidation cv = train_all_folds(ctx.manifest(), cfg, ctx.layout.ckpt_dir(), ctx.plan.jobs, ctx.log);
  ctx.outputs = {ctx.layout.registry(), (fs::path(ctx.layout.ckpt_dir()) / "cv_report.csv").string(),
                 (fs::path(ctx.layout.ckpt_dir()) / "cv_report.txt").string()};
  for (const auto& e : cv.registry.entries) ctx.outputs.push_back((fs::path(ctx.layout.ckpt_dir()) / e.path).string());
  ctx.log("cross-validation\n" + cv.report_table());
}

void ensemble_stage(StageContext& ctx) {
  const SegConfig cfg = ctx.config();
  const Registry reg = Registry::load(ctx.layout.registry());
  const EnsembleSpec spec = default_ensemble_spec(reg, ctx.layout.ckpt_dir(), cfg.subregions, cfg);
  spec.validate(cfg.subregions);
  spec.save(ctx.layout.ensemble_spec());
  ctx.outputs = {ctx.layout.ensemble_spec()};
  for (const auto& [name, paths] : spec.subregions) {
    ctx.log(fmt::format("ensemble {}: {} checkpoints", name, paths.size()));
  }
}

void infer_stage(StageContext& ctx) {
  const SegConfig cfg = ctx.config();
  EnsemblePredictor pred(EnsembleSpec::load(ctx.layout.ensemble_spec()), cfg.subregions);
  std::vector<const CaseRecord*> cases;
  for (const auto& c : ctx.manifest().cases) cases.push_back(&c);
  ctx.outputs = infer_cases(pred, cases, cfg.in_channels, ctx.layout.preds_dir());
  ctx.log(fmt::format("wrote {} predictions with {} distinct models", ctx.outputs.size(), pred.model_count()));
}

void evaluate_stage(StageContext& ctx) {
  const SegConfig cfg = ctx.config();
  const CohortReport rep = evaluate_cohort(ctx.layout.preds_dir(), ctx.manifest(), cfg.subregions);
  fs::create_directories(ctx.layout.reports_dir());
  const std::string csv = (fs::path(ctx.layout.reports_dir()) / "metrics.csv").string();
  const std::string txt = (fs::path(ctx.layout.reports_dir()) / "metrics.txt").string();
  write_text(csv, rep.csv());
  write_text(txt, rep.table());
  ctx.outputs = {csv, txt};
  ctx.log(rep.table());
  if (!rep.missing.empty()) {
    throw StageIncomplete(fmt::format("{} reference case(s) have no prediction", rep.missing.size()));
  }
}

std::string fingerprint(const RunPlan& plan) {
  std::ifstream in(plan.input);
  std::stringstream ss;
  ss << in.rdbuf();
  return fmt::format("{:016x}:{}", hash_string(ss.str()), plan.seed);
}

}  // namespace

StageHandler default_handler(Stage s) {
  switch (s) {
    case Stage::analyze: return analyze_stage;
    case Stage::configure: return configure_stage;
    case Stage::train: return train_stage;
    case Stage::ensemble: return ensemble_stage;
    case Stage::infer: return infer_stage;
    case Stage::evaluate: return evaluate_stage;
  }
  throw Error("no handler for stage");
}

Pipeline::Pipeline(RunPlan plan, std::function<void(const std::string&)> log)
    : plan_(std::move(plan)), log_(std::move(log)) {
  if (!log_) log_ = [](const std::string&) {};
  for (Stage s : all_stages()) handlers_[s] = default_handler(s);
}

void Pipeline::set_handler(Stage s, StageHandler h) { handlers_[s] = std::move(h); }

int Pipeline::run() {
  StageContext ctx;
  ctx.plan = plan_;
  ctx.layout.root = plan_.work_dir;
  ctx.log = log_;
  ctx.input = load_user_input(plan_.input);
  fs::create_directories(plan_.work_dir);

  const std::string fp = fingerprint(plan_);
  nlohmann::json stamps = nlohmann::json::object();
  if (fs::exists(ctx.layout.run_manifest())) {
    try {
      std::ifstream in(ctx.layout.run_manifest());
      nlohmann::json prev = nlohmann::json::parse(in);
      if (prev.value("fingerprint", std::string()) == fp) {
        stamps = prev.value("stages", nlohmann::json::object());
      } else {
        log_("input or seed changed; previous stage stamps ignored");
      }
    } catch (const nlohmann::json::exception&) {
      log_("unreadable run manifest; starting fresh");
    }
  }
  auto persist = [&]() {
    nlohmann::json doc{{"fingerprint", fp},
                       {"input", fs::absolute(plan_.input).string()},
                       {"seed", plan_.seed},
                       {"device", resolve_device()},
                       {"stages", stamps}};
    write_text(ctx.layout.run_manifest(), doc.dump(2) + "\n");
  };

  for (Stage s : plan_.stages) {
    const std::string name = stage_name(s);
    if (stamps.contains(name) && stamps[name].value("completed", false)) {
      log_("stage '" + name + "': skipped (already complete)");
      continue;
    }
    log_("stage '" + name + "': running");
    ctx.outputs.clear();
    try {
      handlers_.at(s)(ctx);
    } catch (const StageIncomplete& e) {
      stamps[name] = {{"completed", false}, {"outputs", ctx.outputs}, {"error", e.what()}};
      persist();
      log_("stage '" + name + "' failed: " + e.what());
      return 1;
    } catch (const std::exception& e) {
      stamps[name] = {{"completed", false}, {"error", e.what()}};
      persist();
      log_("stage '" + name + "' failed: " + e.what());
      return 1;
    }
    std::vector<std::string> rel;
    for (const auto& o : ctx.outputs) rel.push_back(fs::relative(o, plan_.work_dir).generic_string());
    stamps[name] = {{"completed", true}, {"outputs", rel}};
    persist();
    log_("stage '" + name + "': done");
  }
  return 0;
}

std::string resolve_device(const std::function<void(const std::string&)>& log) {
  const char* v = std::getenv("AUTOSEG_DEVICE");
  if (!v || std::string(v).empty() || std::string(v) == "cpu") return "cpu";
  if (log) log(std::string("device '") + v + "' is not available; using cpu");
  return "cpu";
}

}  // namespace autoseg
