#include "autoseg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "autoseg/error.hpp"
#include "autoseg/inference.hpp"
#include "autoseg/metrics.hpp"
#include "autoseg/rng.hpp"
#include "autoseg/transforms.hpp"

namespace fs = std::filesystem;

namespace autoseg {

namespace {

void emit(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

std::vector<std::string> class_names_of(const SubregionSpec& spec) {
  std::vector<std::string> out;
  for (const auto& c : spec.classes) out.push_back(c.name);
  return out;
}

bool trainable(const PreparedCase& c) {
  return c.labelled() && std::any_of(c.available.begin(), c.available.end(), [](uint8_t v) { return v != 0; });
}

}  // namespace

Trainer::Trainer(SegResNet& net, const SegConfig& cfg)
    : net_(net),
      cfg_(cfg),
      opt_(net.parameters(), cfg.weight_decay, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps) {}

StepStats Trainer::step(const std::vector<const PreparedCase*>& batch, int epoch, double lr) {
  if (batch.empty()) throw ValidationError("empty training batch");
  const Shape3 patch = cfg_.patch();
  const int64_t B = static_cast<int64_t>(batch.size());
  const int64_t C = cfg_.in_channels;
  const int64_t K = static_cast<int64_t>(cfg_.subregions.size());
  Tensorf x({B, C, patch.d, patch.h, patch.w});
  Mask y({B, K, patch.d, patch.h, patch.w});
  ClassMask cm({B, K}, 0);
  for (int64_t b = 0; b < B; ++b) {
    const PreparedCase& pc = *batch[static_cast<size_t>(b)];
    if (!pc.labelled()) throw ValidationError(pc.case_id + ": unlabelled case in a training batch");
    if (pc.image.channels() != C) throw ShapeError(pc.case_id + ": channel count differs from the config");
    const uint64_t seed = derive_seed(cfg_.seed, pc.case_id, static_cast<uint64_t>(epoch));
    auto [img, msk] = crop_patch(pc.image.data, pc.mask, patch, seed, cfg_.foreground_crop_prob);
    augment_inplace(img, msk, cfg_.augmentation, seed);
    std::copy(img.data(), img.data() + img.numel(), x.data() + b * img.numel());
    std::copy(msk.data(), msk.data() + msk.numel(), y.data() + b * msk.numel());
    for (int64_t k = 0; k < K; ++k) cm[b * K + k] = pc.available[static_cast<size_t>(k)];
  }

  net_.zero_grad();
  NetworkOutput out = net_.forward(x, true);
  DeepSupervisionLoss loss = deep_supervision_loss(out.logits, y, cm, cfg_.loss, true);
  StepStats st{loss.total, loss.level_losses};
  last_mask_ = cm;
  last_input_ = std::move(x);
  if (!std::isfinite(loss.total)) {
    last_grads_ = std::move(loss.grads);
    return st;
  }
  net_.backward(loss.grads);
  last_grads_ = std::move(loss.grads);
  opt_.step(lr);
  return st;
}

double Trainer::train_epoch(const std::vector<PreparedCase>& cases, int epoch, std::vector<double>* step_losses) {
  std::vector<const PreparedCase*> pool;
  for (const auto& c : cases) {
    if (trainable(c)) pool.push_back(&c);
  }
  if (pool.empty()) throw ValidationError("no training case has an annotated subregion");
  Rng rng(derive_seed(cfg_.seed, "epoch-order", static_cast<uint64_t>(epoch)));
  for (size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[static_cast<size_t>(rng() % i)]);

  const double lr = cosine_lr(cfg_.learning_rate, epoch, cfg_.epochs);
  const size_t bs = static_cast<size_t>(std::max(1, cfg_.batch_size_per_device));
  double sum = 0.0;
  size_t n = 0;
  for (size_t i = 0; i < pool.size(); i += bs) {
    std::vector<const PreparedCase*> batch(pool.begin() + static_cast<std::ptrdiff_t>(i),
                                           pool.begin() + static_cast<std::ptrdiff_t>(std::min(pool.size(), i + bs)));
    const StepStats st = step(batch, epoch, lr);
    if (step_losses) step_losses->push_back(st.loss);
    if (!std::isfinite(st.loss)) {
      std::string ids;
      for (const auto* c : batch) ids += (ids.empty() ? "" : ",") + c->case_id;
      throw TrainingError(fmt::format("non-finite loss at epoch {} step {} (cases {})", epoch, steps() + 1, ids));
    }
    sum += st.loss;
    ++n;
  }
  return sum / static_cast<double>(n);
}

ValidationResult validate(const ProbPredictor& predict, const std::vector<PreparedCase>& cases, double threshold,
                          const Logger& log) {
  ValidationResult r;
  size_t K = 0;
  for (const auto& c : cases) {
    if (c.labelled()) K = std::max(K, static_cast<size_t>(c.mask.dim(0)));
  }
  std::vector<double> sum(K, 0.0);
  r.counts.assign(K, 0);
  const float thr = static_cast<float>(threshold);
  for (const auto& c : cases) {
    if (!c.labelled()) {
      r.skipped.push_back(c.case_id);
      emit(log, "warning: validation case " + c.case_id + " has no label, skipped");
      continue;
    }
    const Tensorf probs = predict(c.image.data);
    if (probs.shape() != c.mask.shape()) {
      throw ShapeError(c.case_id + ": prediction " + shape_str(probs.shape()) + " vs mask " + shape_str(c.mask.shape()));
    }
    const Shape3 s = c.mask.spatial();
    for (size_t k = 0; k < K; ++k) {
      if (!c.available[k]) continue;
      Mask p({s.d, s.h, s.w});
      Mask t({s.d, s.h, s.w});
      const int64_t off = static_cast<int64_t>(k) * s.voxels();
      for (int64_t v = 0; v < s.voxels(); ++v) {
        p[v] = probs[off + v] > thr;
        t[v] = c.mask[off + v];
      }
      sum[k] += dice(p, t);
      ++r.counts[k];
    }
  }
  r.dice.assign(K, 0.0);
  double acc = 0.0;
  int used = 0;
  for (size_t k = 0; k < K; ++k) {
    if (r.counts[k] == 0) continue;
    r.dice[k] = sum[k] / r.counts[k];
    acc += r.dice[k];
    ++used;
  }
  r.dice_avg = used ? acc / used : 0.0;
  return r;
}

ValidationResult validate(SegResNet& net, const std::vector<PreparedCase>& cases, const SegConfig& cfg,
                          const Logger& log) {
  const WindowSpec win{cfg.patch(), cfg.inference.overlap, cfg.inference.blending};
  auto predict = [&](const Tensorf& img) { return sliding_window_infer(net, img, win); };
  return validate(predict, cases, cfg.inference.threshold, log);
}

CheckpointTracker::CheckpointTracker(std::vector<std::string> class_names) : class_names_(std::move(class_names)) {
  tags_.push_back("best_avg");
  for (const auto& n : class_names_) tags_.push_back("best_" + n);
  epoch_.assign(tags_.size(), std::nullopt);
  value_.assign(tags_.size(), -1.0);
}

std::vector<std::string> CheckpointTracker::update(int epoch, const ValidationResult& v) {
  std::vector<std::string> improved;
  for (size_t t = 0; t < tags_.size(); ++t) {
    double m;
    if (t == 0) {
      m = v.dice_avg;
    } else {
      const size_t k = t - 1;
      if (k >= v.counts.size() || v.counts[k] == 0) continue;
      m = v.dice[k];
    }
    if (!epoch_[t] || m > value_[t]) {
      epoch_[t] = epoch;
      value_[t] = m;
      improved.push_back(tags_[t]);
    }
  }
  return improved;
}

std::optional<int> CheckpointTracker::best_epoch(const std::string& tag) const {
  for (size_t t = 0; t < tags_.size(); ++t) {
    if (tags_[t] == tag) return epoch_[t];
  }
  throw ValidationError("unknown checkpoint tag '" + tag + "'");
}

double CheckpointTracker::best_value(const std::string& tag) const {
  for (size_t t = 0; t < tags_.size(); ++t) {
    if (tags_[t] == tag) return value_[t];
  }
  throw ValidationError("unknown checkpoint tag '" + tag + "'");
}

std::map<std::string, double> record_metrics(const CheckpointRecord& r, const std::vector<std::string>& class_names) {
  std::map<std::string, double> m;
  for (size_t k = 0; k < class_names.size() && k < r.dice.size(); ++k) m["dice_" + class_names[k]] = r.dice[k];
  m["dice_avg"] = r.dice_avg;
  return m;
}

namespace {

void load_weights(SegResNet& dst, const std::string& path) {
  if (!fs::exists(path)) throw IoError("init checkpoint " + path + " does not exist");
  LoadedModel src = load_checkpoint(path);
  if (!(src.meta.spec == dst.spec())) {
    throw ValidationError("init checkpoint " + path + " has a network spec that differs from the config");
  }
  auto dp = dst.parameters();
  auto sp = src.net->parameters();
  for (size_t i = 0; i < dp.size(); ++i) dp[i]->value = sp[i]->value;
  auto db = dst.buffers();
  auto sb = src.net->buffers();
  for (size_t i = 0; i < db.size(); ++i) *db[i].values = *sb[i].values;
}

void dump_failure(const std::string& dir, int fold, int epoch, const std::string& what,
                  const std::vector<double>& losses) {
  nlohmann::json j{{"fold", fold}, {"epoch", epoch}, {"error", what}};
  const size_t tail = std::min<size_t>(losses.size(), 50);
  nlohmann::json recent = nlohmann::json::array();
  for (size_t i = losses.size() - tail; i < losses.size(); ++i) {
    recent.push_back(std::isfinite(losses[i]) ? nlohmann::json(losses[i]) : nlohmann::json(nullptr));
  }
  j["recent_losses"] = recent;
  std::ofstream(fs::path(dir) / fmt::format("failure_fold{}.json", fold)) << j.dump(2) << "\n";
}

}  // namespace

FoldResult train_fold(const DatasetManifest& manifest, const SegConfig& cfg, int fold, const TrainOptions& opts) {
  cfg.validate();
  if (fold < 0 || fold >= manifest.num_folds) {
    throw ValidationError(fmt::format("fold {} outside [0, {})", fold, manifest.num_folds));
  }
  if (opts.out_dir.empty()) throw ValidationError("train_fold needs an output directory");
  fs::create_directories(opts.out_dir);
  const auto names = class_names_of(cfg.subregions);

  const auto train_cases = prepare_cases(manifest.fold_cases(fold, false), cfg.subregions, cfg.in_channels);
  const auto val_cases = prepare_cases(manifest.fold_cases(fold, true), cfg.subregions, cfg.in_channels);

  SegResNet net(NetworkSpec::from_config(cfg), cfg.network_seed);
  if (opts.init_checkpoint) load_weights(net, *opts.init_checkpoint);
  Trainer trainer(net, cfg);
  CheckpointTracker tracker(names);

  FoldResult result;
  result.fold = fold;
  std::map<std::string, CheckpointRecord> best;
  auto save = [&](const std::string& tag, int epoch, const ValidationResult& v) {
    CheckpointRecord rec;
    rec.path = (fs::path(opts.out_dir) / checkpoint_filename(tag, fold)).string();
    rec.fold = fold;
    rec.epoch = epoch;
    rec.dice = v.dice;
    rec.dice_avg = v.dice_avg;
    rec.tag = tag;
    CheckpointMeta meta{net.spec(), fold, epoch, tag, names, record_metrics(rec, names)};
    save_checkpoint(rec.path, net, meta);
    best[tag] = rec;
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochLog el;
    el.epoch = epoch;
    el.lr = cosine_lr(cfg.learning_rate, epoch, cfg.epochs);
    try {
      el.mean_loss = trainer.train_epoch(train_cases, epoch, &result.loss_trajectory);
    } catch (const TrainingError& e) {
      dump_failure(opts.out_dir, fold, epoch, e.what(), result.loss_trajectory);
      throw;
    }
    const bool last = epoch + 1 == cfg.epochs;
    if ((epoch + 1) % cfg.validation_interval == 0 || last) {
      ValidationResult v = validate(net, val_cases, cfg, opts.log);
      for (const auto& tag : tracker.update(epoch, v)) save(tag, epoch, v);
      if (last) save("last", epoch, v);
      std::string line = fmt::format("fold {} epoch {} loss {:.5f} lr {:.3g} val dice_avg {:.4f}", fold, epoch,
                                     el.mean_loss, el.lr, v.dice_avg);
      for (size_t k = 0; k < names.size(); ++k) line += fmt::format(" {} {:.4f}", names[k], v.dice[k]);
      emit(opts.log, line);
      el.validation = std::move(v);
    } else {
      emit(opts.log, fmt::format("fold {} epoch {} loss {:.5f} lr {:.3g}", fold, epoch, el.mean_loss, el.lr));
    }
    result.history.push_back(std::move(el));
  }
  for (const auto& tag : tracker.tags()) {
    if (best.count(tag)) result.records.push_back(best.at(tag));
  }
  result.records.push_back(best.at("last"));
  return result;
}

std::string CrossValidation::report_csv() const {
  std::string head, row;
  for (size_t f = 0; f < fold_dice.size(); ++f) {
    head += fmt::format("Fold {},", f + 1);
    row += fmt::format("{:.17g},", fold_dice[f]);
  }
  return head + "Average\n" + row + fmt::format("{:.17g}\n", average);
}

std::string CrossValidation::report_table() const {
  std::string head = fmt::format("{:<10}", ""), row = fmt::format("{:<10}", "Dice");
  for (size_t f = 0; f < fold_dice.size(); ++f) {
    head += fmt::format("{:>10}", fmt::format("Fold {}", f + 1));
    row += fmt::format("{:>10.4f}", fold_dice[f]);
  }
  return head + fmt::format("{:>10}\n", "Average") + row + fmt::format("{:>10.4f}\n", average);
}

CrossValidation train_all_folds(const DatasetManifest& manifest, const SegConfig& cfg, const std::string& ckpt_root,
                                int jobs, const Logger& log) {
  manifest.validate();
  if (manifest.num_folds != cfg.num_folds) {
    throw ValidationError(fmt::format("manifest has {} folds, config expects {}", manifest.num_folds, cfg.num_folds));
  }
  fs::create_directories(ckpt_root);
  const int k = manifest.num_folds;
  CrossValidation cv;
  cv.folds.resize(static_cast<size_t>(k));
  std::vector<std::exception_ptr> errors(static_cast<size_t>(k));
  std::mutex log_mu;
  Logger safe_log = [&](const std::string& s) {
    std::lock_guard<std::mutex> lock(log_mu);
    emit(log, s);
  };
  auto run = [&](int f) {
    try {
      TrainOptions o;
      o.out_dir = (fs::path(ckpt_root) / fmt::format("fold{}", f)).string();
      o.log = safe_log;
      cv.folds[static_cast<size_t>(f)] = train_fold(manifest, cfg, f, o);
    } catch (...) {
      errors[static_cast<size_t>(f)] = std::current_exception();
    }
  };
  jobs = std::max(1, jobs);
  for (int start = 0; start < k; start += jobs) {
    std::vector<std::thread> pool;
    for (int f = start; f < std::min(k, start + jobs); ++f) {
      if (jobs == 1) {
        run(f);
      } else {
        pool.emplace_back(run, f);
      }
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  const auto names = class_names_of(cfg.subregions);
  for (const auto& fr : cv.folds) {
    for (const auto& r : fr.records) {
      cv.registry.entries.push_back({r.fold, r.tag, r.epoch, fs::relative(r.path, ckpt_root).generic_string(),
                                     record_metrics(r, names)});
      if (r.tag == "best_avg") cv.fold_dice.push_back(r.dice_avg);
    }
  }
  cv.average = cv.fold_dice.empty()
                   ? 0.0
                   : std::accumulate(cv.fold_dice.begin(), cv.fold_dice.end(), 0.0) / static_cast<double>(cv.fold_dice.size());
  cv.registry.save((fs::path(ckpt_root) / "registry.json").string());
  std::ofstream(fs::path(ckpt_root) / "cv_report.csv") << cv.report_csv();
  std::ofstream(fs::path(ckpt_root) / "cv_report.txt") << cv.report_table();
  return cv;
}

}  // namespace autoseg
