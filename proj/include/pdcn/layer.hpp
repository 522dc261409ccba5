#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pdcn/tensor.hpp"

namespace pdcn {

enum class Mode { train, eval };

enum class LayerKind { conv2d, batchnorm, relu, maxpool2d, globalavgpool, flatten, dense, dropout, softmax, add };

inline std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::globalavgpool: return "globalavgpool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dense: return "dense";
    case LayerKind::dropout: return "dropout";
    case LayerKind::softmax: return "softmax";
    case LayerKind::add: return "add";
  }
  return "unknown";
}

/// A named trainable tensor and its gradient buffer.
template <class T>
struct Param {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;
};

/// A named tensor that is part of layer state but never optimized
/// (batchnorm moving statistics).
template <class T>
struct StateTensor {
  std::string name;
  BasicTensor<T> value;
};

struct ParamCount {
  std::uint64_t trainable = 0;
  std::uint64_t non_trainable = 0;
  friend bool operator==(const ParamCount&, const ParamCount&) = default;
};

/// Base class for every layer kind. Forward in train mode caches what the
/// matching backward needs; backward before such a forward is a StateError.
template <class T>
class Layer {
 public:
  using TensorT = BasicTensor<T>;

  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  virtual std::size_t num_inputs() const { return 1; }

  /// Per-sample output shape (batch axis excluded) for the given per-sample input shape.
  virtual Shape output_shape(const Shape& in) const = 0;

  TensorT forward(const TensorT& x, Mode mode, std::uint64_t seed = 0) {
    const TensorT* in[] = {&x};
    return forward(std::span<const TensorT* const>(in), mode, seed);
  }

  TensorT forward(std::span<const TensorT* const> inputs, Mode mode, std::uint64_t seed = 0) {
    if (inputs.size() != num_inputs())
      throw ShapeError(std::string(to_string(kind())) + " expects " + std::to_string(num_inputs()) + " input(s)");
    if (mode == Mode::eval) clear_cache();
    TensorT out = do_forward(inputs, mode, seed);
    out.check_finite(std::string(to_string(kind())) + " forward");
    return out;
  }

  /// Returns one input gradient per input (left empty when `need_input_grad`
  /// is false) and accumulates parameter gradients when the layer is trainable.
  std::vector<TensorT> backward(const TensorT& upstream, bool need_input_grad = true) {
    if (!cached_) throw StateError(std::string(to_string(kind())) + " backward called before a train-mode forward");
    if (upstream.shape() != out_shape_)
      throw ShapeError(std::string(to_string(kind())) + " backward: upstream " + upstream.shape().str() +
                       " does not match forward output " + out_shape_.str());
    return do_backward(upstream, need_input_grad);
  }

  std::vector<Param<T>>& params() { return params_; }
  const std::vector<Param<T>>& params() const { return params_; }
  std::vector<StateTensor<T>>& state() { return state_; }
  const std::vector<StateTensor<T>>& state() const { return state_; }

  bool trainable() const { return trainable_; }
  void set_trainable(bool flag) { trainable_ = flag; }

  ParamCount param_count() const {
    std::uint64_t p = 0;
    for (const auto& prm : params_) p += prm.value.size();
    std::uint64_t s = 0;
    for (const auto& st : state_) s += st.value.size();
    return trainable_ ? ParamCount{p, s} : ParamCount{0, p + s};
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(T{0});
  }

  /// Drops cached activations (frees memory, re-arms the state check).
  void clear_cache() {
    cached_ = false;
    release_cache();
  }

 protected:
  virtual TensorT do_forward(std::span<const TensorT* const> inputs, Mode mode, std::uint64_t seed) = 0;
  virtual std::vector<TensorT> do_backward(const TensorT& upstream, bool need_input_grad) = 0;
  virtual void release_cache() {}

  void add_param(std::string name, TensorT value) {
    TensorT g = TensorT::zeros_like(value);
    params_.push_back({std::move(name), std::move(value), std::move(g)});
  }
  void add_state(std::string name, TensorT value) { state_.push_back({std::move(name), std::move(value)}); }

  void mark_cached(const Shape& out) {
    cached_ = true;
    out_shape_ = out;
  }

  std::vector<Param<T>> params_;
  std::vector<StateTensor<T>> state_;
  bool trainable_ = true;

 private:
  bool cached_ = false;
  Shape out_shape_;
};

}  // namespace pdcn
