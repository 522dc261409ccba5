#pragma once

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <ostream>
#include <string>
#include <vector>

#include "pdcn/config.hpp"
#include "pdcn/metrics.hpp"
#include "pdcn/train.hpp"

namespace pdcn::app {

enum ExitCode : int { kOk = 0, kPartial = 1, kInvalid = 2 };

/// 1234567 -> "1,234,567"
inline std::string group_digits(std::uint64_t v) {
  std::string s = std::to_string(v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

inline void log_config(const RunConfig& c, const std::string& command, std::ostream& log) {
  log << "# " << command << ": resolved config\n" << format_config(c);
}

inline void print_counts(const DatasetManifest& m, std::ostream& out) {
  out << std::left << std::setw(18) << "class" << std::right << std::setw(8) << "train" << std::setw(8) << "val"
      << std::setw(8) << "test" << '\n';
  const auto tr = m.counts(Split::train), va = m.counts(Split::val), te = m.counts(Split::test);
  for (std::size_t c = 0; c < kNumClasses; ++c)
    out << std::left << std::setw(18) << kClassNames[c] << std::right << std::setw(8) << tr[c] << std::setw(8) << va[c]
        << std::setw(8) << te[c] << '\n';
}

// ---------------------------------------------------------------------------

/// annotations + frames -> cropped corpus, split, balanced, manifest.
inline int cmd_prepare(const RunConfig& c, std::ostream& out, std::ostream& log) {
  log_config(c, "prepare", log);
  if (c.annotations.empty()) throw ConfigError("prepare needs an annotation file (annotations = ...)");
  if (!std::filesystem::is_regular_file(c.annotations)) throw IngestError(c.annotations + ": annotation file not found");
  if (c.frames.empty() || !std::filesystem::is_directory(c.frames))
    throw IngestError((c.frames.empty() ? std::string("<unset>") : c.frames) + ": frame directory not found");

  const auto parsed = parse_coco(read_file(c.annotations));
  if (parsed.skipped_missing_bbox > 0)
    log << "skipped " << parsed.skipped_missing_bbox << " annotation(s) without a bounding box\n";
  const auto manifest_path = c.manifest_path();
  const auto root = manifest_path.parent_path();

  std::vector<SampleRecord> records;
  std::string frame_name;
  Image frame;
  for (const auto& rec : parsed.records) {
    if (frame.empty() || rec.file_name != frame_name) {
      try {
        frame = load_image(std::filesystem::path(c.frames) / rec.file_name);
      } catch (const ImageError& e) {
        throw IngestError(std::string("frame for annotation ") + std::to_string(rec.annotation_id) + ": " + e.what());
      }
      frame_name = rec.file_name;
    }
    SampleRecord s;
    s.cls = rec.cls;
    s.source_id = rec.annotation_id;
    s.path = "crops/" + std::string(class_slug(rec.cls)) + "/" + std::to_string(rec.annotation_id) + ".ppm";
    try {
      save_ppm(crop_and_resize(frame, rec, kInputSize), root / s.path);
    } catch (const CropError& e) {
      throw CropError("annotation " + std::to_string(rec.annotation_id) + ": " + e.what());
    }
    records.push_back(std::move(s));
  }
  const auto split = stratified_split(std::move(records), c.split, split_seed(c));
  const auto balanced = balance_train(split, c.balance_target, balance_seed(c), root, c.augment);
  write_manifest(balanced, manifest_path);
  print_counts(balanced, out);
  out << "manifest: " << manifest_path.string() << '\n';
  return kOk;
}

/// Per-layer parameter ledger for a registry id or a checkpoint file.
inline int cmd_inspect(const std::string& target, std::ostream& out) {
  ParamLedger ledger;
  std::string title;
  int id = 0;
  if (target.size() == 1 && std::isdigit(static_cast<unsigned char>(target[0]))) {
    id = target[0] - '0';
    auto cfg = registry_lookup(id);
    cfg.pretrained.reset();
    ledger = model_summary(build_model<float>(cfg, 0));
    title = "model " + std::to_string(id);
  } else {
    if (!std::filesystem::is_regular_file(target)) throw ConfigError(target + ": not a model id (1-8) or checkpoint file");
    auto restored = restore_checkpoint(checkpoint_load(target));
    ledger = model_summary(restored.model);
    title = "checkpoint " + target + " (model " + std::to_string(restored.config.id) + ")";
  }
  out << title << '\n';
  out << std::left << std::setw(6) << "#" << std::setw(34) << "layer" << std::setw(14) << "kind" << std::right
      << std::setw(14) << "trainable" << std::setw(16) << "non-trainable" << '\n';
  for (const auto& e : ledger.entries)
    out << std::left << std::setw(6) << e.index << std::setw(34) << e.name << std::setw(14) << to_string(e.kind)
        << std::right << std::setw(14) << group_digits(e.trainable) << std::setw(16) << group_digits(e.non_trainable)
        << '\n';
  out << "total / trainable: " << group_digits(ledger.total) << " / " << group_digits(ledger.trainable) << '\n';
  return kOk;
}

inline TrainConfig train_config(const RunConfig& c) {
  TrainConfig tc;
  tc.seed = train_seed(c);
  tc.batch_size = c.batch_size;
  tc.max_epochs_phase1 = c.epochs;
  tc.max_epochs_phase2 = c.epochs_phase2;
  tc.patience = c.patience;
  tc.monitor = c.monitor == "val_accuracy" ? Monitor::val_accuracy : Monitor::val_loss;
  tc.eval_batch_size = c.eval_batch_size;
  return tc;
}

/// Trains the configured model on the manifest; writes checkpoint, history
/// and the resolved config next to the checkpoint.
inline int cmd_train(const RunConfig& c, std::ostream& out, std::ostream& log) {
  log_config(c, "train", log);
  const auto manifest_path = c.manifest_path();
  if (!std::filesystem::is_regular_file(manifest_path)) throw ConfigError(manifest_path.string() + ": manifest not found");
  const auto manifest = read_manifest(manifest_path);
  auto cfg = registry_lookup(c.model);
  if (c.pretrained.empty())
    cfg.pretrained.reset();
  else if (cfg.architecture == Architecture::resnet50)
    cfg.pretrained = c.pretrained;
  auto model = build_model<float>(cfg, init_seed(c));
  auto tc = train_config(c);
  tc.on_epoch_end = [&](const EpochRecord& r) {
    out << "epoch " << r.epoch << " phase " << r.phase << std::fixed << std::setprecision(4) << "  loss "
        << r.train_loss << "  acc " << r.train_accuracy << "  val_loss " << r.val_loss << "  val_acc " << r.val_accuracy
        << std::defaultfloat << '\n';
    return true;
  };
  const auto res = train(model, cfg, tc, manifest, manifest_path.parent_path());
  const auto ckpt = c.checkpoint_path();
  checkpoint_save(res.checkpoint, ckpt);
  auto stem = ckpt;
  stem.replace_extension();
  write_file(stem.string() + ".history.csv", res.history.to_csv());
  write_file(stem.string() + ".config", format_config(c));
  out << "best epoch " << res.history.best_epoch << ", stop: " << to_string(res.history.stop_reason) << '\n';
  out << "checkpoint: " << ckpt.string() << '\n';
  return kOk;
}

/// Metrics report and PR-curve CSV for one split.
inline int cmd_evaluate(const RunConfig& c, std::ostream& out, std::ostream& log) {
  log_config(c, "evaluate", log);
  const auto ckpt_path = c.checkpoint_path();
  if (!std::filesystem::is_regular_file(ckpt_path)) throw ConfigError(ckpt_path.string() + ": checkpoint not found");
  const auto manifest_path = c.manifest_path();
  if (!std::filesystem::is_regular_file(manifest_path)) throw ConfigError(manifest_path.string() + ": manifest not found");
  auto restored = restore_checkpoint(checkpoint_load(ckpt_path));
  const auto manifest = read_manifest(manifest_path);
  const auto split = *parse_split(c.split_name);
  const auto ev = evaluate_split(restored.model, manifest.split(split), manifest_path.parent_path(), c.eval_batch_size);
  const auto report = build_report(restored.config.id, ev.probs, ev.labels);
  auto stem = ckpt_path;
  stem.replace_extension();
  const std::string base = stem.string() + "." + c.split_name;
  write_file(base + ".report.json", serialize_report(report));
  write_file(base + ".pr.csv", pr_curves_csv(report));
  out << std::fixed << std::setprecision(4) << "accuracy " << report.accuracy << '\n';
  if (report.pr_auc_macro)
    out << "macro PR-AUC " << *report.pr_auc_macro << '\n';
  else
    out << "macro PR-AUC undefined\n";
  for (auto cls : report.pr_auc_excluded()) out << "  no positives for " << class_name(cls) << "; excluded\n";
  out << std::defaultfloat << "report: " << base << ".report.json\n";
  return kOk;
}

/// One line per image: path, predicted class, six probabilities.
inline int cmd_infer(const RunConfig& c, const std::vector<std::string>& images, std::ostream& out, std::ostream& log) {
  const auto ckpt_path = c.checkpoint_path();
  if (!std::filesystem::is_regular_file(ckpt_path)) throw ConfigError(ckpt_path.string() + ": checkpoint not found");
  if (images.empty()) throw ConfigError("infer needs at least one image path");
  auto restored = restore_checkpoint(checkpoint_load(ckpt_path));
  int code = kOk;
  for (const auto& path : images) {
    try {
      Image img = load_image(path);
      if (img.dim(0) != kInputSize || img.dim(1) != kInputSize) img = resize_bilinear(img, kInputSize, kInputSize);
      Tensor x = img.reshaped(Shape(std::vector<std::size_t>{1, kInputSize, kInputSize, 3}));
      for (auto& v : x.values()) v /= 255.0f;
      const auto probs = restored.model.forward(x, Mode::eval);
      const auto k = argmax_row(probs.raw(), kNumClasses);
      char buf[32];
      out << path << '\t' << kClassNames[k];
      for (std::size_t j = 0; j < kNumClasses; ++j) {
        std::snprintf(buf, sizeof buf, "%.9f", static_cast<double>(probs[j]));
        out << '\t' << buf;
      }
      out << '\n';
    } catch (const Error& e) {
      log << "error: " << e.what() << '\n';
      code = kPartial;
    }
  }
  return code;
}

}  // namespace pdcn::app
