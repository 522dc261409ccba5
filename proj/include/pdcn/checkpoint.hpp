#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdcn/optim.hpp"

namespace pdcn {

// ---------------------------------------------------------------------------
// Training history

struct EpochRecord {
  int epoch = 0;  // 1-based, continues across phases
  int phase = 1;
  double train_loss = 0, train_accuracy = 0;
  double val_loss = 0, val_accuracy = 0;
  double seconds = 0;
};

enum class StopReason { early_stop, max_epochs, callback };

inline std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::early_stop: return "early_stop";
    case StopReason::max_epochs: return "max_epochs";
    case StopReason::callback: return "callback";
  }
  return "?";
}

struct History {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  StopReason stop_reason = StopReason::max_epochs;

  /// FNV-1a over every field except wall-clock time, so identical runs agree.
  std::string digest() const {
    std::ostringstream os;
    os << std::setprecision(17);
    for (const auto& e : epochs)
      os << e.epoch << ',' << e.phase << ',' << e.train_loss << ',' << e.train_accuracy << ',' << e.val_loss << ','
         << e.val_accuracy << '\n';
    os << best_epoch << ',' << to_string(stop_reason);
    std::ostringstream hex;
    hex << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(os.str());
    return hex.str();
  }

  /// CSV export, one record per epoch.
  std::string to_csv() const {
    std::ostringstream os;
    os << "epoch,phase,train_loss,train_accuracy,val_loss,val_accuracy,seconds\n" << std::setprecision(9);
    for (const auto& e : epochs)
      os << e.epoch << ',' << e.phase << ',' << e.train_loss << ',' << e.train_accuracy << ',' << e.val_loss << ','
         << e.val_accuracy << ',' << e.seconds << '\n';
    return os.str();
  }
};

// ---------------------------------------------------------------------------
// Checkpoint container
//
// Layout (little-endian):
//   "PDCN" | u32 version | u32 meta_len | meta_len bytes of UTF-8 JSON |
//   u32 tensor_count | tensor_count x { u32 name_len | name | u32 rank |
//   rank x u32 extent | numel x f32 }

inline constexpr char kCheckpointMagic[4] = {'P', 'D', 'C', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Checkpoint {
  std::string metadata;  // JSON text, kept verbatim
  std::vector<NamedTensor> tensors;

  nlohmann::json meta() const { return nlohmann::json::parse(metadata); }

  const Tensor* find(std::string_view name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t.tensor;
    return nullptr;
  }
};

namespace ckpt_detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : b_(bytes) {}

  std::uint32_t u32(const std::string& section) {
    need(4, section);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string bytes(std::size_t n, const std::string& section) {
    need(n, section);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n, const std::string& section) {
    if (b_.size() - pos_ < n) throw FormatError("checkpoint truncated in " + section);
  }
  const std::string& b_;
  std::size_t pos_ = 0;
};

}  // namespace ckpt_detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  std::string out(kCheckpointMagic, 4);
  ckpt_detail::put_u32(out, kCheckpointVersion);
  ckpt_detail::put_u32(out, static_cast<std::uint32_t>(c.metadata.size()));
  out += c.metadata;
  ckpt_detail::put_u32(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    ckpt_detail::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    ckpt_detail::put_u32(out, static_cast<std::uint32_t>(t.tensor.rank()));
    for (auto d : t.tensor.shape().dims()) ckpt_detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.tensor.values()) ckpt_detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  ckpt_detail::Reader r(bytes);
  if (r.bytes(4, "header") != std::string(kCheckpointMagic, 4)) throw FormatError("checkpoint header: bad magic bytes");
  const auto version = r.u32("header");
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint header: unsupported format version " + std::to_string(version));
  Checkpoint c;
  c.metadata = r.bytes(r.u32("metadata"), "metadata");
  if (!nlohmann::json::accept(c.metadata)) throw FormatError("checkpoint metadata: not valid JSON");
  const auto count = r.u32("tensor table");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string where = "tensor table (entry " + std::to_string(i) + ")";
    NamedTensor t;
    t.name = r.bytes(r.u32(where), where);
    const std::string tw = "tensor table (" + t.name + ")";
    const auto rank = r.u32(tw);
    if (rank < 1 || rank > 8) throw FormatError(tw + ": bad rank");
    std::vector<std::size_t> dims;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.u32(tw);
      if (d < 1) throw FormatError(tw + ": zero extent");
      dims.push_back(d);
    }
    Shape s(std::move(dims));
    std::vector<float> vals(s.numel());
    for (auto& v : vals) v = std::bit_cast<float>(r.u32(tw));
    t.tensor = Tensor(std::move(s), std::move(vals));
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw FormatError("checkpoint has trailing bytes after the tensor table");
  return c;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path.string() + ": cannot write");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(path.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void checkpoint_save(const Checkpoint& c, const std::filesystem::path& path) {
  write_file(path, serialize_checkpoint(c));
}

inline Checkpoint checkpoint_load(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

// ---------------------------------------------------------------------------
// Model <-> checkpoint

inline nlohmann::json config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["id"] = c.id;
  j["architecture"] = std::string(to_string(c.architecture));
  j["pooling"] = std::string(to_string(c.pooling));
  j["optimizer"] = std::string(to_string(c.optimizer));
  j["initial_lr"] = c.initial_lr;
  j["finetune_lr"] = c.finetune_lr ? nlohmann::json(*c.finetune_lr) : nlohmann::json(nullptr);
  j["pretrained"] = c.pretrained ? nlohmann::json(*c.pretrained) : nlohmann::json(nullptr);
  return j;
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.id = j.at("id").get<int>();
    const auto arch = j.at("architecture").get<std::string>();
    if (arch != "resnet50" && arch != "custom") throw FormatError("unknown architecture " + arch);
    c.architecture = arch == "resnet50" ? Architecture::resnet50 : Architecture::custom;
    const auto pool = j.at("pooling").get<std::string>();
    if (pool != "GAP" && pool != "MP") throw FormatError("unknown pooling " + pool);
    c.pooling = pool == "GAP" ? Pooling::gap : Pooling::mp;
    const auto opt = j.at("optimizer").get<std::string>();
    if (opt != "adam" && opt != "sgd_momentum") throw FormatError("unknown optimizer " + opt);
    c.optimizer = opt == "adam" ? OptimizerKind::adam : OptimizerKind::sgd_momentum;
    c.initial_lr = j.at("initial_lr").get<double>();
    if (!j.at("finetune_lr").is_null()) c.finetune_lr = j["finetune_lr"].get<double>();
    if (!j.at("pretrained").is_null()) c.pretrained = j["pretrained"].get<std::string>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: bad model config: ") + e.what());
  }
}

inline std::vector<std::string> slot_names(OptimizerKind k) {
  if (k == OptimizerKind::adam) return {"m", "v"};
  return {"velocity"};
}

struct CheckpointInfo {
  std::uint64_t seed = 0;
  int epoch = 0;
  int phase = 1;
};

/// Snapshot of parameters, batchnorm statistics, optimizer slots and
/// training metadata.
inline Checkpoint make_checkpoint(Model<float>& model, const ModelConfig& cfg, const OptimizerState& opt,
                                  const History& history, const CheckpointInfo& info) {
  nlohmann::json meta;
  meta["format"] = "pdcn-checkpoint";
  meta["model"] = config_to_json(cfg);
  nlohmann::json classes = nlohmann::json::array();
  for (auto n : kClassNames) classes.push_back(std::string(n));
  meta["class_order"] = classes;
  meta["seed"] = info.seed;
  meta["epoch"] = info.epoch;
  meta["phase"] = info.phase;
  meta["history_digest"] = history.digest();
  meta["best_epoch"] = history.best_epoch;
  meta["stop_reason"] = std::string(to_string(history.stop_reason));
  nlohmann::json o;
  o["kind"] = std::string(to_string(opt.kind));
  o["lr"] = opt.lr;
  o["momentum"] = opt.momentum;
  o["beta1"] = opt.beta1;
  o["beta2"] = opt.beta2;
  o["epsilon"] = opt.epsilon;
  o["t"] = opt.t;
  meta["optimizer"] = o;
  nlohmann::json trainable = nlohmann::json::array();
  for (const auto& n : model.nodes())
    if (n.layer->trainable()) trainable.push_back(n.name);
  meta["trainable_nodes"] = trainable;

  Checkpoint c;
  c.metadata = meta.dump(1);
  for (auto& [name, t] : model.named_tensors()) c.tensors.push_back({name, *t});
  const auto names = slot_names(opt.kind);
  for (const auto& [pname, slots] : opt.slots)
    for (std::size_t k = 0; k < slots.size(); ++k) c.tensors.push_back({"optimizer/" + pname + "/" + names.at(k), slots[k]});
  return c;
}

struct RestoredCheckpoint {
  ModelConfig config;
  Model<float> model;
  OptimizerState optimizer;
  CheckpointInfo info;
  std::string history_digest;
};

/// Rebuilds the model named in the metadata and fills every tensor from the
/// table. Missing or mis-shaped tensors raise LoadError.
inline RestoredCheckpoint restore_checkpoint(const Checkpoint& c) {
  nlohmann::json meta;
  try {
    meta = c.meta();
  } catch (const nlohmann::json::exception&) {
    throw FormatError("checkpoint metadata: not valid JSON");
  }
  if (!meta.contains("model") || !meta.contains("optimizer")) throw FormatError("checkpoint metadata: missing sections");
  ModelConfig cfg = config_from_json(meta["model"]);
  // Backbone weights come from the table below, not from the original source.
  ModelConfig build_cfg = cfg;
  build_cfg.pretrained.reset();
  Model<float> model = build_model<float>(build_cfg, 0);
  for (auto& [name, t] : model.named_tensors()) {
    const Tensor* src = c.find(name);
    if (!src) throw LoadError("checkpoint lacks tensor " + name);
    if (src->shape() != t->shape())
      throw LoadError("tensor " + name + " has shape " + src->shape().str() + ", model expects " + t->shape().str());
    *t = *src;
  }
  model.set_all_trainable(false);
  for (const auto& n : meta.value("trainable_nodes", nlohmann::json::array())) {
    const int idx = model.find(n.get<std::string>());
    if (idx < 0) throw FormatError("checkpoint metadata: unknown node " + n.get<std::string>());
    model.set_trainable(static_cast<std::size_t>(idx), true);
  }

  OptimizerState opt;
  const auto& o = meta["optimizer"];
  opt.kind = o.at("kind").get<std::string>() == "adam" ? OptimizerKind::adam : OptimizerKind::sgd_momentum;
  opt.lr = o.at("lr").get<double>();
  opt.momentum = o.at("momentum").get<double>();
  opt.beta1 = o.at("beta1").get<double>();
  opt.beta2 = o.at("beta2").get<double>();
  opt.epsilon = o.at("epsilon").get<double>();
  opt.t = o.at("t").get<std::uint64_t>();
  const auto names = slot_names(opt.kind);
  for (const auto& t : c.tensors) {
    if (t.name.rfind("optimizer/", 0) != 0) continue;
    const auto last = t.name.rfind('/');
    const std::string pname = t.name.substr(10, last - 10);
    const std::string slot = t.name.substr(last + 1);
    const auto it = std::find(names.begin(), names.end(), slot);
    if (it == names.end()) throw FormatError("tensor table: unknown optimizer slot " + t.name);
    auto& v = opt.slots[pname];
    const auto k = static_cast<std::size_t>(it - names.begin());
    if (v.size() <= k) v.resize(names.size());
    v[k] = t.tensor;
  }
  for (const auto& [pname, v] : opt.slots)
    for (const auto& s : v)
      if (s.empty()) throw FormatError("tensor table: incomplete optimizer slots for " + pname);

  CheckpointInfo info;
  info.seed = meta.value("seed", std::uint64_t{0});
  info.epoch = meta.value("epoch", 0);
  info.phase = meta.value("phase", 1);
  return {cfg, std::move(model), std::move(opt), info, meta.value("history_digest", std::string())};
}

/// Copies every backbone tensor of `model` from a checkpoint file; the first
/// missing or mis-shaped tensor raises LoadError.
template <class T>
void load_backbone_weights(Model<T>& model, const std::string& checkpoint_path) {
  const Checkpoint c = checkpoint_load(checkpoint_path);
  for (auto& n : model.nodes()) {
    if (!n.backbone) continue;
    auto copy_in = [&](const std::string& tname, BasicTensor<T>& dst) {
      const std::string full = n.name + "/" + tname;
      const Tensor* src = c.find(full);
      if (!src) throw LoadError("backbone weights: checkpoint lacks tensor " + full);
      if (src->shape() != dst.shape())
        throw LoadError("backbone weights: tensor " + full + " has shape " + src->shape().str() + ", expected " +
                        dst.shape().str());
      dst = src->template cast<T>();
    };
    for (auto& p : n.layer->params()) copy_in(p.name, p.value);
    for (auto& s : n.layer->state()) copy_in(s.name, s.value);
  }
}

}  // namespace pdcn
