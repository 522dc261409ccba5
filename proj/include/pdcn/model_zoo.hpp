#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "pdcn/classes.hpp"
#include "pdcn/model.hpp"

namespace pdcn {

enum class Architecture { resnet50, custom };
enum class Pooling { gap, mp };
enum class OptimizerKind { adam, sgd_momentum };

inline std::string_view to_string(Architecture a) { return a == Architecture::resnet50 ? "resnet50" : "custom"; }
inline std::string_view to_string(Pooling p) { return p == Pooling::gap ? "GAP" : "MP"; }
inline std::string_view to_string(OptimizerKind o) { return o == OptimizerKind::adam ? "adam" : "sgd_momentum"; }

/// One experimental variant: architecture, head pooling, optimizer and the
/// learning rates of the two training phases.
struct ModelConfig {
  int id = 0;
  Architecture architecture = Architecture::custom;
  Pooling pooling = Pooling::gap;
  OptimizerKind optimizer = OptimizerKind::adam;
  double initial_lr = 0.0;
  std::optional<double> finetune_lr;  // resnet50 only
  std::optional<std::string> pretrained;  // checkpoint path with backbone weights
};

inline constexpr int kNumModels = 8;

/// The eight variants of the comparison study.
inline ModelConfig registry_lookup(int model_id) {
  using A = Architecture;
  using P = Pooling;
  using O = OptimizerKind;
  switch (model_id) {
    case 1: return {1, A::resnet50, P::gap, O::adam, 0.0001, 0.00001, std::nullopt};
    case 2: return {2, A::resnet50, P::mp, O::adam, 0.0001, 0.00001, std::nullopt};
    case 3: return {3, A::resnet50, P::gap, O::sgd_momentum, 0.01, 0.001, std::nullopt};
    case 4: return {4, A::resnet50, P::mp, O::sgd_momentum, 0.01, 0.001, std::nullopt};
    case 5: return {5, A::custom, P::gap, O::adam, 0.00001, std::nullopt, std::nullopt};
    case 6: return {6, A::custom, P::mp, O::adam, 0.00001, std::nullopt, std::nullopt};
    case 7: return {7, A::custom, P::gap, O::sgd_momentum, 0.001, std::nullopt, std::nullopt};
    case 8: return {8, A::custom, P::mp, O::sgd_momentum, 0.001, std::nullopt, std::nullopt};
    default:
      throw ConfigError("model id must be in 1..8, got " + std::to_string(model_id));
  }
}

inline constexpr std::size_t kInputSize = 99;
inline constexpr std::size_t kHiddenUnits = 512;
inline constexpr double kDropoutRate = 0.3;

inline Shape model_input_shape() { return Shape(std::vector<std::size_t>{kInputSize, kInputSize, 3}); }

namespace zoo_detail {

template <class T>
std::size_t channels_of(const Model<T>& m, int node) {
  return node < 0 ? m.input_shape().back() : m.node(static_cast<std::size_t>(node)).out_shape.back();
}

/// Pooling + dense512 + relu + dropout + dense6 + softmax.
template <class T>
void add_head(Model<T>& m, Pooling pooling, std::uint64_t seed) {
  if (pooling == Pooling::gap) {
    m.add("head_gap", std::make_unique<GlobalAvgPool<T>>());
  } else {
    m.add("head_pool", std::make_unique<MaxPool2D<T>>(2, 2, Padding::valid_floor));
    m.add("head_flatten", std::make_unique<Flatten<T>>());
  }
  const std::size_t features = m.output_shape()[0];
  m.add("head_dense", std::make_unique<Dense<T>>(kHiddenUnits, features, derive_seed(seed, "head_dense")));
  m.add("head_relu", std::make_unique<ReLU<T>>());
  m.add("head_dropout", std::make_unique<Dropout<T>>(kDropoutRate));
  m.add("logits", std::make_unique<Dense<T>>(kNumClasses, kHiddenUnits, derive_seed(seed, "logits")));
  m.add("softmax", std::make_unique<Softmax<T>>());
}

/// conv -> batchnorm (-> relu when `activate`), all tagged as backbone.
template <class T>
int conv_bn(Model<T>& m, const std::string& prefix, int input, std::size_t filters, std::size_t kernel,
            std::size_t stride, Padding padding, bool activate, std::uint64_t seed) {
  const std::size_t cin = channels_of(m, input);
  int n = m.add(prefix + "_conv",
                std::make_unique<Conv2D<T>>(filters, kernel, cin, stride, padding, derive_seed(seed, prefix)),
                {input}, true);
  n = m.add(prefix + "_bn", std::make_unique<BatchNorm<T>>(filters), {n}, true);
  if (activate) n = m.add(prefix + "_relu", std::make_unique<ReLU<T>>(), {n}, true);
  return n;
}

/// Post-activation bottleneck. The stride sits on the first 1x1 conv and on
/// the projection shortcut.
template <class T>
int bottleneck(Model<T>& m, const std::string& name, int input, std::size_t width, std::size_t stride,
               bool project, std::uint64_t seed) {
  const Padding pad = stride > 1 ? Padding::same_ceil : Padding::same_preserving;
  int x = conv_bn(m, name + "_1", input, width, 1, stride, pad, true, seed);
  x = conv_bn(m, name + "_2", x, width, 3, 1, Padding::same_preserving, true, seed);
  int shortcut = input;
  if (project) shortcut = conv_bn(m, name + "_0", input, width * 4, 1, stride, pad, false, seed);
  x = conv_bn(m, name + "_3", x, width * 4, 1, 1, Padding::same_preserving, false, seed);
  x = m.add(name + "_add", std::make_unique<Add<T>>(), {x, shortcut}, true);
  return m.add(name + "_out", std::make_unique<ReLU<T>>(), {x}, true);
}

}  // namespace zoo_detail

/// Four conv blocks (32/64/128/256 filters, 3x3 same, batchnorm, relu, 2x2
/// max pool) followed by the classification head.
template <class T = float>
Model<T> build_custom_cnn(Pooling pooling, std::uint64_t seed) {
  Model<T> m(model_input_shape());
  constexpr std::array<std::size_t, 4> widths = {32, 64, 128, 256};
  std::size_t cin = 3;
  for (std::size_t b = 0; b < widths.size(); ++b) {
    const std::string p = "block" + std::to_string(b + 1);
    m.add(p + "_conv",
          std::make_unique<Conv2D<T>>(widths[b], 3, cin, 1, Padding::same_preserving, derive_seed(seed, p + "_conv")));
    m.add(p + "_bn", std::make_unique<BatchNorm<T>>(widths[b]));
    m.add(p + "_relu", std::make_unique<ReLU<T>>());
    m.add(p + "_pool", std::make_unique<MaxPool2D<T>>(2, 2, Padding::valid_floor));
    cin = widths[b];
  }
  zoo_detail::add_head(m, pooling, seed);
  return m;
}

template <class T = float>
void load_backbone_weights(Model<T>& m, const std::string& checkpoint_path);

/// 50-layer residual backbone (stages of 3/4/6/3 bottlenecks) plus the
/// classification head. The backbone starts frozen. With `weights`, backbone
/// tensors are taken from a checkpoint file.
template <class T = float>
Model<T> build_resnet50(Pooling pooling, const std::optional<std::string>& weights, std::uint64_t seed) {
  Model<T> m(model_input_shape());
  int x = zoo_detail::conv_bn(m, "conv1", Model<T>::kInput, 64, 7, 2, Padding::same_ceil, true, seed);
  x = m.add("pool1_pool", std::make_unique<MaxPool2D<T>>(3, 2, Padding::same_ceil), {x}, true);
  constexpr std::array<std::size_t, 4> blocks = {3, 4, 6, 3};
  constexpr std::array<std::size_t, 4> widths = {64, 128, 256, 512};
  for (std::size_t s = 0; s < 4; ++s) {
    for (std::size_t b = 0; b < blocks[s]; ++b) {
      const std::string name = "conv" + std::to_string(s + 2) + "_block" + std::to_string(b + 1);
      const std::size_t stride = (b == 0 && s > 0) ? 2 : 1;
      x = zoo_detail::bottleneck(m, name, x, widths[s], stride, b == 0, seed);
    }
  }
  zoo_detail::add_head(m, pooling, seed);
  m.set_backbone_trainable(false);
  if (weights) load_backbone_weights(m, *weights);
  return m;
}

template <class T = float>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.architecture == Architecture::custom) return build_custom_cnn<T>(cfg.pooling, seed);
  return build_resnet50<T>(cfg.pooling, cfg.pretrained, seed);
}

/// Per-layer ledger plus (total, trainable).
template <class T>
ParamLedger model_summary(const Model<T>& m) {
  return m.summary();
}

}  // namespace pdcn
