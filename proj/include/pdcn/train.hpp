#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "pdcn/checkpoint.hpp"
#include "pdcn/dataset.hpp"

namespace pdcn {

// ---------------------------------------------------------------------------
// Loss

struct LossResult {
  double loss = 0.0;
  Tensor logit_grad;  // (N, 6)
};

namespace train_detail {

inline void check_labels(const Tensor& labels, std::size_t n, std::size_t k) {
  if (labels.rank() != 2 || labels.dim(0) != n || labels.dim(1) != k)
    throw ShapeError("labels must be (" + std::to_string(n) + ", " + std::to_string(k) + "), got " + labels.shape().str());
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t ones = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const float v = labels.at(i, j);
      if (v == 1.0f)
        ++ones;
      else if (v != 0.0f)
        throw LabelError("label row " + std::to_string(i) + " is not one-hot");
    }
    if (ones != 1) throw LabelError("label row " + std::to_string(i) + " is not one-hot");
  }
}

}  // namespace train_detail

/// Mean categorical cross-entropy of softmax outputs; the returned gradient is
/// with respect to the pre-softmax logits, (probs - labels) / N.
inline LossResult cross_entropy_loss(const Tensor& probs, const Tensor& labels) {
  if (probs.rank() != 2) throw ShapeError("probabilities must be (N, classes)");
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  train_detail::check_labels(labels, n, k);
  LossResult r;
  r.logit_grad = Tensor(probs.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < k; ++j) row += probs.at(i, j);
    if (std::abs(row - 1.0) > 1e-5) throw NumericError("probability row " + std::to_string(i) + " does not sum to 1");
    for (std::size_t j = 0; j < k; ++j) {
      if (labels.at(i, j) == 1.0f)
        total -= std::log(std::max(static_cast<double>(probs.at(i, j)), std::numeric_limits<double>::min()));
      r.logit_grad.at(i, j) = (probs.at(i, j) - labels.at(i, j)) / static_cast<float>(n);
    }
  }
  r.loss = total / static_cast<double>(n);
  return r;
}

template <class T>
struct LogitLoss {
  double loss = 0.0;
  BasicTensor<T> probs;
  BasicTensor<T> logit_grad;
};

/// Same loss computed from logits with log-sum-exp.
template <class T>
LogitLoss<T> cross_entropy_with_logits(const BasicTensor<T>& logits, const Tensor& labels) {
  if (logits.rank() != 2) throw ShapeError("logits must be (N, classes)");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  train_detail::check_labels(labels, n, k);
  LogitLoss<T> r;
  r.probs = BasicTensor<T>(logits.shape());
  r.logit_grad = BasicTensor<T>(logits.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(logits.at(i, j)));
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(static_cast<double>(logits.at(i, j)) - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < k; ++j) {
      const double lp = static_cast<double>(logits.at(i, j)) - lse;
      const double p = std::exp(lp);
      r.probs.at(i, j) = static_cast<T>(p);
      if (labels.at(i, j) == 1.0f) total -= lp;
      r.logit_grad.at(i, j) = static_cast<T>((p - labels.at(i, j)) / static_cast<double>(n));
    }
  }
  r.loss = total / static_cast<double>(n);
  if (!std::isfinite(r.loss)) throw NumericError("cross-entropy loss is not finite");
  return r;
}

inline Tensor one_hot(std::span<const DemographicClass> classes) {
  Tensor t(Shape(std::vector<std::size_t>{classes.size(), kNumClasses}));
  for (std::size_t i = 0; i < classes.size(); ++i) t.at(i, index_of(classes[i])) = 1.0f;
  return t;
}

// ---------------------------------------------------------------------------
// Early stopping

/// Tracks the minimum of a monitored value; stop once `patience` consecutive
/// epochs fail to improve on it strictly.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {
    if (patience < 1) throw ConfigError("patience must be >= 1");
  }

  /// Returns true when `value` is a new best.
  bool update(int epoch, double value) {
    if (value < best_) {
      best_ = value;
      best_epoch_ = epoch;
      wait_ = 0;
      return true;
    }
    ++wait_;
    return false;
  }

  bool should_stop() const { return wait_ >= patience_; }
  void reset_wait() { wait_ = 0; }
  int best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  int patience_;
  int wait_ = 0;
  int best_epoch_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

// ---------------------------------------------------------------------------
// Data access

enum class Monitor { val_loss, val_accuracy };

struct Batch {
  Tensor x;  // (B, 99, 99, 3), scaled to [0, 1]
  Tensor y;  // one-hot (B, 6)
};

/// Loads the listed samples (paths relative to `root`) and scales pixels by 1/255.
inline Batch load_batch(const std::vector<SampleRecord>& samples, std::span<const std::size_t> order,
                        const std::filesystem::path& root) {
  const Shape in = model_input_shape();
  const std::size_t per = in.numel();
  Batch b;
  std::vector<std::size_t> dims{order.size()};
  for (auto d : in.dims()) dims.push_back(d);
  b.x = Tensor(Shape(dims));
  std::vector<DemographicClass> cls;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& s = samples[order[i]];
    const auto path = root / s.path;
    Image img;
    try {
      img = load_image(path);
    } catch (const Error& e) {
      throw DataError(std::string("cannot load training image: ") + e.what());
    }
    if (img.shape() != in) throw DataError(path.string() + ": expected " + in.str() + ", got " + img.shape().str());
    float* dst = b.x.raw() + i * per;
    for (std::size_t j = 0; j < per; ++j) dst[j] = img[j] / 255.0f;
    cls.push_back(s.cls);
  }
  b.y = one_hot(cls);
  return b;
}

inline std::size_t argmax_row(const float* row, std::size_t k) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<std::array<double, kNumClasses>> probs;
  std::vector<DemographicClass> labels;
};

/// Eval-mode pass over `samples` in batches of `batch_size`.
inline EvalResult evaluate_split(Model<float>& model, const std::vector<SampleRecord>& samples,
                                 const std::filesystem::path& root, std::size_t batch_size = 32) {
  if (samples.empty()) throw DataError("cannot evaluate an empty split");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  EvalResult r;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, samples.size() - start);
    const auto b = load_batch(samples, std::span(order).subspan(start, len), root);
    const auto logits = model.forward_logits(b.x, Mode::eval);
    const auto l = cross_entropy_with_logits(logits, b.y);
    loss_sum += l.loss * static_cast<double>(len);
    for (std::size_t i = 0; i < len; ++i) {
      std::array<double, kNumClasses> p{};
      for (std::size_t j = 0; j < kNumClasses; ++j) p[j] = l.probs.at(i, j);
      const auto pred = argmax_row(l.probs.raw() + i * kNumClasses, kNumClasses);
      if (pred == index_of(samples[start + i].cls)) ++correct;
      r.probs.push_back(p);
      r.labels.push_back(samples[start + i].cls);
    }
  }
  r.loss = loss_sum / static_cast<double>(samples.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  return r;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t batch_size = 8;
  int max_epochs_phase1 = 70;
  int max_epochs_phase2 = 30;
  int patience = 10;
  Monitor monitor = Monitor::val_loss;
  std::size_t eval_batch_size = 32;
  /// Called after every epoch; returning false ends training.
  std::function<bool(const EpochRecord&)> on_epoch_end;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (eval_batch_size < 1) throw ConfigError("eval batch size must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (max_epochs_phase1 < 1) throw ConfigError("phase-1 epochs must be >= 1");
    if (max_epochs_phase2 < 0) throw ConfigError("phase-2 epochs must be >= 0");
  }
};

struct TrainResult {
  History history;
  OptimizerState optimizer;
  Checkpoint checkpoint;
};

/// Runs phase 1 and, for resnet50 configs, phase 2. Each epoch shuffles the
/// train split, steps once per batch and validates in eval mode. When training
/// ends the parameters of the best monitored epoch are restored.
inline TrainResult train(Model<float>& model, const ModelConfig& cfg, const TrainConfig& tc,
                         const DatasetManifest& data, const std::filesystem::path& root) {
  tc.validate();
  const auto train_set = data.split(Split::train);
  const auto val_set = data.split(Split::val);
  if (train_set.empty()) throw DataError("manifest has no train samples");
  if (val_set.empty()) throw DataError("manifest has no validation samples");

  TrainResult res;
  auto& hist = res.history;
  OptimizerState opt = make_optimizer(cfg.optimizer, cfg.initial_lr);
  EarlyStopping stopper(tc.patience);
  std::vector<Tensor> best_weights;
  int epoch = 0;
  std::uint64_t step = 0;
  int last_phase = 1;
  bool halted = false;

  std::vector<int> phases{1};
  if (cfg.architecture == Architecture::resnet50 && cfg.finetune_lr && tc.max_epochs_phase2 > 0) phases.push_back(2);

  for (int phase : phases) {
    if (halted) break;
    apply_phase(cfg, model, opt, phase);
    last_phase = phase;
    stopper.reset_wait();
    const int max_epochs = phase == 1 ? tc.max_epochs_phase1 : tc.max_epochs_phase2;
    hist.stop_reason = StopReason::max_epochs;
    for (int pe = 0; pe < max_epochs; ++pe) {
      ++epoch;
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<std::size_t> order(train_set.size());
      std::iota(order.begin(), order.end(), 0);
      Rng shuffle_rng(derive_seed(tc.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
      std::shuffle(order.begin(), order.end(), shuffle_rng);

      double loss_sum = 0.0;
      std::size_t correct = 0;
      std::size_t batch_index = 0;
      for (std::size_t start = 0; start < order.size(); start += tc.batch_size, ++batch_index) {
        const std::size_t len = std::min(tc.batch_size, order.size() - start);
        const auto b = load_batch(train_set, std::span(order).subspan(start, len), root);
        const auto where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index);
        try {
          model.zero_grad();
          const auto logits = model.forward_logits(b.x, Mode::train, derive_seed(tc.seed, "dropout", step));
          const auto l = cross_entropy_with_logits(logits, b.y);
          model.backward_from_logits(l.logit_grad);
          optimizer_step(model, opt);
          for (const auto& p : trainable_params(model)) p.value->check_finite("parameter " + p.name);
          loss_sum += l.loss * static_cast<double>(len);
          for (std::size_t i = 0; i < len; ++i)
            if (argmax_row(l.probs.raw() + i * kNumClasses, kNumClasses) == index_of(train_set[order[start + i]].cls))
              ++correct;
        } catch (const NumericError& e) {
          throw NumericError("training diverged at " + where + ": " + e.what());
        }
        ++step;
      }
      model.clear_caches();

      const auto val = evaluate_split(model, val_set, root, tc.eval_batch_size);
      EpochRecord rec;
      rec.epoch = epoch;
      rec.phase = phase;
      rec.train_loss = loss_sum / static_cast<double>(order.size());
      rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
      rec.val_loss = val.loss;
      rec.val_accuracy = val.accuracy;
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      hist.epochs.push_back(rec);

      const double monitored = tc.monitor == Monitor::val_loss ? val.loss : -val.accuracy;
      if (stopper.update(epoch, monitored)) best_weights = model.snapshot();
      if (tc.on_epoch_end && !tc.on_epoch_end(rec)) {
        hist.stop_reason = StopReason::callback;
        halted = true;
        break;
      }
      if (stopper.should_stop()) {
        hist.stop_reason = StopReason::early_stop;
        break;
      }
    }
    // The next phase starts from the best weights seen so far.
    if (!best_weights.empty()) model.restore(best_weights);
  }
  hist.best_epoch = stopper.best_epoch();
  res.checkpoint = make_checkpoint(model, cfg, opt, hist, {tc.seed, epoch, last_phase});
  res.optimizer = std::move(opt);
  return res;
}

}  // namespace pdcn
