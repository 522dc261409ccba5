#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pdcn/model_zoo.hpp"

namespace pdcn {

/// Optimizer hyperparameters, step counter and per-parameter slots
/// (velocity for SGD; first and second moments for Adam).
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::sgd_momentum;
  double lr = 0.01;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  std::uint64_t t = 0;
  std::map<std::string, std::vector<Tensor>> slots;

  std::size_t slots_per_param() const { return kind == OptimizerKind::adam ? 2 : 1; }
};

inline OptimizerState make_optimizer(OptimizerKind kind, double lr) {
  OptimizerState s;
  s.kind = kind;
  s.lr = lr;
  return s;
}

/// A parameter handed to an optimizer step.
struct ParamRef {
  std::string name;
  Tensor* value = nullptr;
  const Tensor* grad = nullptr;
};

namespace optim_detail {

inline std::vector<Tensor>& slots_for(OptimizerState& st, const ParamRef& p) {
  if (p.grad->shape() != p.value->shape())
    throw OptimizerError("gradient shape " + p.grad->shape().str() + " does not match parameter " + p.name + " " +
                         p.value->shape().str());
  auto& s = st.slots[p.name];
  if (s.empty()) {
    for (std::size_t i = 0; i < st.slots_per_param(); ++i) s.push_back(Tensor::zeros_like(*p.value));
  }
  if (s.size() != st.slots_per_param()) throw OptimizerError("slot count mismatch for " + p.name);
  for (const auto& t : s)
    if (t.shape() != p.value->shape()) throw OptimizerError("slot shape mismatch for " + p.name);
  return s;
}

}  // namespace optim_detail

/// v <- momentum * v - lr * g;  p <- p + v
inline void sgd_momentum_step(std::span<const ParamRef> params, OptimizerState& st) {
  for (const auto& p : params) {
    auto& v = optim_detail::slots_for(st, p)[0];
    const float mom = static_cast<float>(st.momentum);
    const float lr = static_cast<float>(st.lr);
    float* pv = p.value->raw();
    const float* g = p.grad->raw();
    float* vel = v.raw();
    for (std::size_t i = 0; i < v.size(); ++i) {
      vel[i] = mom * vel[i] - lr * g[i];
      pv[i] += vel[i];
    }
  }
  ++st.t;
}

/// Bias-corrected Adam.
inline void adam_step(std::span<const ParamRef> params, OptimizerState& st) {
  const std::uint64_t t = st.t + 1;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(t));
  for (const auto& p : params) {
    auto& s = optim_detail::slots_for(st, p);
    float* pv = p.value->raw();
    const float* g = p.grad->raw();
    float* m = s[0].raw();
    float* v = s[1].raw();
    for (std::size_t i = 0; i < s[0].size(); ++i) {
      const double gi = g[i];
      const double mi = st.beta1 * m[i] + (1.0 - st.beta1) * gi;
      const double vi = st.beta2 * v[i] + (1.0 - st.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double mhat = mi / c1;
      const double vhat = vi / c2;
      pv[i] = static_cast<float>(static_cast<double>(pv[i]) - st.lr * mhat / (std::sqrt(vhat) + st.epsilon));
    }
  }
  st.t = t;
}

/// Parameters of every trainable layer, in graph order.
inline std::vector<ParamRef> trainable_params(Model<float>& model) {
  std::vector<ParamRef> out;
  for (auto& n : model.nodes()) {
    if (!n.layer->trainable()) continue;
    for (auto& p : n.layer->params()) out.push_back({n.name + "/" + p.name, &p.value, &p.grad});
  }
  return out;
}

/// Allocates zero slots for trainable parameters that have none yet.
inline void ensure_slots(Model<float>& model, OptimizerState& st) {
  for (const auto& p : trainable_params(model)) optim_detail::slots_for(st, p);
}

/// One update of all trainable parameters from their accumulated gradients.
inline void optimizer_step(Model<float>& model, OptimizerState& st) {
  const auto params = trainable_params(model);
  if (st.kind == OptimizerKind::adam)
    adam_step(params, st);
  else
    sgd_momentum_step(params, st);
}

inline constexpr std::size_t kFineTuneLayers = 100;

struct PhaseChange {
  int phase = 1;
  double lr = 0.0;
  std::size_t layers_unfrozen = 0;
};

/// Phase 1: backbone frozen, initial learning rate. Phase 2 (resnet50 only):
/// the last 100 backbone layer objects in topological order become trainable
/// and the learning rate drops to the fine-tune value. New trainable
/// parameters receive fresh slots.
inline PhaseChange apply_phase(const ModelConfig& cfg, Model<float>& model, OptimizerState& st, int phase) {
  PhaseChange change;
  change.phase = phase;
  if (phase == 1) {
    model.set_backbone_trainable(false);
    st.lr = cfg.initial_lr;
  } else if (phase == 2) {
    if (cfg.architecture != Architecture::resnet50 || !cfg.finetune_lr)
      throw ConfigError("model " + std::to_string(cfg.id) + " has no fine-tuning phase");
    const auto backbone = model.backbone_indices();
    const std::size_t n = std::min(kFineTuneLayers, backbone.size());
    for (std::size_t i = backbone.size() - n; i < backbone.size(); ++i) model.set_trainable(backbone[i], true);
    change.layers_unfrozen = n;
    st.lr = *cfg.finetune_lr;
  } else {
    throw ConfigError("phase must be 1 or 2");
  }
  ensure_slots(model, st);
  change.lr = st.lr;
  return change;
}

}  // namespace pdcn
