#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pdcn/layers.hpp"

namespace pdcn {

struct ParamLedgerEntry {
  std::size_t index = 0;
  std::string name;
  LayerKind kind = LayerKind::relu;
  std::uint64_t trainable = 0;
  std::uint64_t non_trainable = 0;
};

struct ParamLedger {
  std::vector<ParamLedgerEntry> entries;
  std::uint64_t total = 0;
  std::uint64_t trainable = 0;
};

/// A layer placed in the model graph. Input index -1 denotes the model input.
template <class T>
struct Node {
  std::string name;
  std::unique_ptr<Layer<T>> layer;
  std::vector<int> inputs;
  bool backbone = false;
  Shape out_shape;  // per sample
};

/// Layer graph in topological order; the last node is the output.
template <class T>
class Model {
 public:
  using TensorT = BasicTensor<T>;

  static constexpr int kInput = -1;

  explicit Model(Shape input_shape) : input_shape_(std::move(input_shape)) {}

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  /// Appends a layer fed by `inputs` (default: the previous node, or the model
  /// input for the first node). Returns the new node's index.
  int add(std::string name, std::unique_ptr<Layer<T>> layer, std::vector<int> inputs = {}, bool backbone = false) {
    if (inputs.empty()) inputs.push_back(nodes_.empty() ? kInput : static_cast<int>(nodes_.size()) - 1);
    if (inputs.size() != layer->num_inputs()) throw ShapeError("node " + name + ": wrong number of inputs");
    Shape in = shape_of(inputs[0]);
    for (int i : inputs)
      if (shape_of(i) != in) throw ShapeError("node " + name + ": mismatched input shapes");
    Shape out = layer->output_shape(in);
    for (const auto& n : nodes_)
      if (n.name == name) throw ShapeError("duplicate node name " + name);
    nodes_.push_back({std::move(name), std::move(layer), std::move(inputs), backbone, std::move(out)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return nodes_.back().out_shape; }
  std::size_t size() const { return nodes_.size(); }
  Node<T>& node(std::size_t i) { return nodes_.at(i); }
  const Node<T>& node(std::size_t i) const { return nodes_.at(i); }
  std::vector<Node<T>>& nodes() { return nodes_; }
  const std::vector<Node<T>>& nodes() const { return nodes_; }

  int find(std::string_view name) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].name == name) return static_cast<int>(i);
    return -1;
  }

  /// Full forward pass (softmax probabilities for the zoo models).
  TensorT forward(const TensorT& x, Mode mode, std::uint64_t seed = 0) {
    return run(x, mode, seed, nodes_.size());
  }

  /// Forward pass stopping before a final softmax node: returns logits.
  TensorT forward_logits(const TensorT& x, Mode mode, std::uint64_t seed = 0) {
    return run(x, mode, seed, logits_end());
  }

  /// Back-propagates a gradient w.r.t. the output of the final node.
  void backward(const TensorT& grad_output) { backprop(grad_output, nodes_.size()); }

  /// Back-propagates a gradient w.r.t. the logits (input of the final softmax).
  void backward_from_logits(const TensorT& grad_logits) { backprop(grad_logits, logits_end()); }

  void zero_grad() {
    for (auto& n : nodes_) n.layer->zero_grad();
  }

  void clear_caches() {
    for (auto& n : nodes_) n.layer->clear_cache();
  }

  void set_trainable(std::size_t i, bool flag) { nodes_.at(i).layer->set_trainable(flag); }

  void set_backbone_trainable(bool flag) {
    for (auto& n : nodes_)
      if (n.backbone) n.layer->set_trainable(flag);
  }

  void set_all_trainable(bool flag) {
    for (auto& n : nodes_) n.layer->set_trainable(flag);
  }

  std::vector<std::size_t> backbone_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].backbone) out.push_back(i);
    return out;
  }

  ParamLedger summary() const {
    ParamLedger l;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto c = nodes_[i].layer->param_count();
      l.entries.push_back({i, nodes_[i].name, nodes_[i].layer->kind(), c.trainable, c.non_trainable});
      l.total += c.trainable + c.non_trainable;
      l.trainable += c.trainable;
    }
    return l;
  }

  /// Every parameter and state tensor as ("node/tensor", pointer), in graph order.
  std::vector<std::pair<std::string, TensorT*>> named_tensors() {
    std::vector<std::pair<std::string, TensorT*>> out;
    for (auto& n : nodes_) {
      for (auto& p : n.layer->params()) out.emplace_back(n.name + "/" + p.name, &p.value);
      for (auto& s : n.layer->state()) out.emplace_back(n.name + "/" + s.name, &s.value);
    }
    return out;
  }

  std::vector<TensorT> snapshot() {
    std::vector<TensorT> out;
    for (auto& [name, t] : named_tensors()) out.push_back(*t);
    return out;
  }

  void restore(const std::vector<TensorT>& snap) {
    auto refs = named_tensors();
    if (refs.size() != snap.size()) throw StateError("snapshot does not match model");
    for (std::size_t i = 0; i < refs.size(); ++i) *refs[i].second = snap[i];
  }

 private:
  const Shape& shape_of(int i) const {
    if (i == kInput) return input_shape_;
    if (i < 0 || static_cast<std::size_t>(i) >= nodes_.size()) throw ShapeError("node input index out of range");
    return nodes_[static_cast<std::size_t>(i)].out_shape;
  }

  std::size_t logits_end() const {
    if (nodes_.empty() || nodes_.back().layer->kind() != LayerKind::softmax)
      throw StateError("model does not end in a softmax node");
    return nodes_.size() - 1;
  }

  /// requires[i]: node i or an ancestor holds trainable parameters.
  std::vector<bool> requires_grad() const {
    std::vector<bool> req(nodes_.size(), false);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto& n = nodes_[i];
      bool r = n.layer->trainable() && !n.layer->params().empty();
      for (int in : n.inputs)
        if (in != kInput && req[static_cast<std::size_t>(in)]) r = true;
      req[i] = r;
    }
    return req;
  }

  TensorT run(const TensorT& x, Mode mode, std::uint64_t seed, std::size_t end) {
    if (nodes_.empty()) throw StateError("empty model");
    if (x.rank() < 2 || detail::per_sample(x.shape()) != input_shape_)
      throw ShapeError("model expects per-sample input " + input_shape_.str() + ", got batch " + x.shape().str());
    std::vector<std::size_t> last_use(end, 0);
    for (std::size_t i = 0; i < end; ++i)
      for (int in : nodes_[i].inputs)
        if (in != kInput) last_use[static_cast<std::size_t>(in)] = i;
    const auto req = mode == Mode::train ? requires_grad() : std::vector<bool>(nodes_.size(), false);

    std::vector<TensorT> outs(end);
    for (std::size_t i = 0; i < end; ++i) {
      auto& n = nodes_[i];
      std::vector<const TensorT*> ins;
      for (int in : n.inputs) ins.push_back(in == kInput ? &x : &outs[static_cast<std::size_t>(in)]);
      // Frozen prefixes that no trainable layer depends on run without caches.
      Mode m = mode;
      if (mode == Mode::train && !req[i] && n.layer->kind() != LayerKind::dropout) {
        m = Mode::eval;
      }
      outs[i] = n.layer->forward(std::span<const TensorT* const>(ins), m, derive_seed(seed, "node", i));
      for (int in : n.inputs)
        if (in != kInput && last_use[static_cast<std::size_t>(in)] == i) outs[static_cast<std::size_t>(in)] = TensorT();
    }
    return std::move(outs[end - 1]);
  }

  void backprop(const TensorT& grad, std::size_t end) {
    const auto req = requires_grad();
    std::vector<TensorT> grads(end);
    grads[end - 1] = grad;
    for (std::size_t ii = end; ii-- > 0;) {
      auto& n = nodes_[ii];
      if (grads[ii].empty()) continue;
      if (!req[ii]) {
        grads[ii] = TensorT();
        continue;
      }
      bool need_input = false;
      for (int in : n.inputs)
        if (in != kInput && req[static_cast<std::size_t>(in)]) need_input = true;
      auto gin = n.layer->backward(grads[ii], need_input);
      grads[ii] = TensorT();
      if (!need_input) continue;
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        const int in = n.inputs[k];
        if (in == kInput || !req[static_cast<std::size_t>(in)]) continue;
        auto& dst = grads[static_cast<std::size_t>(in)];
        if (dst.empty()) {
          dst = std::move(gin[k]);
        } else {
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += gin[k][j];
        }
      }
    }
  }

  Shape input_shape_;
  std::vector<Node<T>> nodes_;
};

}  // namespace pdcn
