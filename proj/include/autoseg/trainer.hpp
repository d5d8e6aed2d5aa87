#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "autoseg/checkpoint.hpp"
#include "autoseg/config.hpp"
#include "autoseg/dataset.hpp"
#include "autoseg/loss.hpp"
#include "autoseg/optim.hpp"

namespace autoseg {

using Logger = std::function<void(const std::string&)>;

struct StepStats {
  double loss = 0.0;
  std::vector<double> level_losses;
};

// One optimisation step = crop + augment each case, forward, deep-supervised
// loss, backward, AdamW. Sample randomness depends only on (seed, case, epoch).
class Trainer {
 public:
  Trainer(SegResNet& net, const SegConfig& cfg);

  StepStats step(const std::vector<const PreparedCase*>& batch, int epoch, double lr);
  // Every case with an available class, shuffled per epoch, in batches of
  // batch_size_per_device. Returns the mean step loss.
  double train_epoch(const std::vector<PreparedCase>& cases, int epoch, std::vector<double>* step_losses = nullptr);

  // State of the most recent step, for inspection.
  const std::vector<Tensorf>& last_logit_grads() const { return last_grads_; }
  const ClassMask& last_class_mask() const { return last_mask_; }
  const Tensorf& last_input() const { return last_input_; }
  int64_t steps() const { return opt_.steps(); }

 private:
  SegResNet& net_;
  SegConfig cfg_;
  AdamW opt_;
  std::vector<Tensorf> last_grads_;
  ClassMask last_mask_;
  Tensorf last_input_;
};

struct ValidationResult {
  std::vector<double> dice;     // per subregion; NaN-free, 0 where no case contributes
  std::vector<int> counts;      // cases contributing per subregion
  double dice_avg = 0.0;        // over subregions with at least one contributing case
  std::vector<std::string> skipped;  // unlabelled cases
};

// Maps a C x D x H x W image to K x D x H x W probabilities.
using ProbPredictor = std::function<Tensorf(const Tensorf&)>;

// Mean over cases of per-subregion Dice at `threshold`; a case counts towards a
// subregion only when that class is annotated for it.
ValidationResult validate(const ProbPredictor& predict, const std::vector<PreparedCase>& cases, double threshold,
                          const Logger& log = {});
ValidationResult validate(SegResNet& net, const std::vector<PreparedCase>& cases, const SegConfig& cfg,
                          const Logger& log = {});

struct CheckpointRecord {
  std::string path;
  int fold = 0;
  int epoch = 0;
  std::vector<double> dice;
  double dice_avg = 0.0;
  std::string tag;  // best_avg, best_<subregion>, last
};

// Best-so-far bookkeeping; a strictly greater metric is needed to replace a record.
class CheckpointTracker {
 public:
  explicit CheckpointTracker(std::vector<std::string> class_names);
  // Returns the tags whose best improved at this epoch.
  std::vector<std::string> update(int epoch, const ValidationResult& v);
  const std::vector<std::string>& tags() const { return tags_; }
  std::optional<int> best_epoch(const std::string& tag) const;
  double best_value(const std::string& tag) const;

 private:
  std::vector<std::string> class_names_;
  std::vector<std::string> tags_;
  std::vector<std::optional<int>> epoch_;
  std::vector<double> value_;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;
  std::optional<ValidationResult> validation;
};

struct FoldResult {
  int fold = 0;
  std::vector<CheckpointRecord> records;
  std::vector<EpochLog> history;
  std::vector<double> loss_trajectory;  // per step
};

struct TrainOptions {
  std::string out_dir;                         // checkpoints land here
  std::optional<std::string> init_checkpoint;  // fine-tune start point
  Logger log;
};

FoldResult train_fold(const DatasetManifest& manifest, const SegConfig& cfg, int fold, const TrainOptions& opts);

struct CrossValidation {
  Registry registry;
  std::vector<FoldResult> folds;
  std::vector<double> fold_dice;  // best_avg per fold
  double average = 0.0;

  std::string report_csv() const;
  std::string report_table() const;
};

// Trains every fold into <ckpt_root>/fold<k>/ (up to `jobs` folds at once), writes
// registry.json plus cv_report.csv / cv_report.txt under ckpt_root.
CrossValidation train_all_folds(const DatasetManifest& manifest, const SegConfig& cfg, const std::string& ckpt_root,
                                int jobs = 1, const Logger& log = {});

std::map<std::string, double> record_metrics(const CheckpointRecord& r, const std::vector<std::string>& class_names);

}  // namespace autoseg
