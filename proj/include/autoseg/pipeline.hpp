#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "autoseg/analyzer.hpp"
#include "autoseg/config.hpp"
#include "autoseg/manifest.hpp"

namespace autoseg {

enum class Stage { analyze, configure, train, ensemble, infer, evaluate };

const std::vector<Stage>& all_stages();  // dependency order
std::string stage_name(Stage s);
Stage stage_from_name(const std::string& name);  // ValidationError
// Comma-separated names, returned in dependency order.
std::vector<Stage> parse_stages(const std::string& list);

struct RunPlan {
  std::vector<Stage> stages = all_stages();
  std::string input;  // input.yaml
  std::string work_dir = "work";
  uint64_t seed = 0;
  int jobs = 1;
};

// Work-directory layout.
struct WorkLayout {
  std::string root;
  std::string config_dir() const;
  std::string splits_dir() const;
  std::string ckpt_dir() const;
  std::string preds_dir() const;
  std::string reports_dir() const;
  std::string run_manifest() const;
  std::string datastats() const;
  std::string config_file() const;
  std::string folds_file() const;
  std::string registry() const;
  std::string ensemble_spec() const;
};

struct StageContext {
  RunPlan plan;
  WorkLayout layout;
  UserInput input;
  std::function<void(const std::string&)> log;
  std::vector<std::string> outputs;  // files written by the current stage

  const DatasetManifest& manifest();
  SegConfig config() const;  // reads config_file()

 private:
  std::optional<DatasetManifest> manifest_;
};

using StageHandler = std::function<void(StageContext&)>;

// Raised by a stage that completed its outputs but must report failure
// (e.g. evaluation with missing predictions).
struct StageIncomplete : Error {
  using Error::Error;
};

class Pipeline {
 public:
  Pipeline(RunPlan plan, std::function<void(const std::string&)> log);

  void set_handler(Stage s, StageHandler h);
  // 0 when every requested stage succeeded or was already complete; otherwise 1
  // after logging "stage '<name>' failed: ...".
  int run();

 private:
  RunPlan plan_;
  std::function<void(const std::string&)> log_;
  std::map<Stage, StageHandler> handlers_;
};

StageHandler default_handler(Stage s);

// Compute device from AUTOSEG_DEVICE (only "cpu" is available).
std::string resolve_device(const std::function<void(const std::string&)>& log = {});

}  // namespace autoseg
