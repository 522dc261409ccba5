#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pdcn/augment.hpp"
#include "pdcn/dataset.hpp"
#include "pdcn/model_zoo.hpp"
#include "pdcn/error.hpp"
#include "pdcn/rng.hpp"

namespace pdcn {

/// Settings shared by the command-line tools. Values resolve as
/// defaults < config file < command-line flags.
struct RunConfig {
  std::string annotations;
  std::string frames;
  std::string workdir = "work";
  std::string manifest;    // default: <workdir>/manifest.tsv
  std::string checkpoint;  // default: <workdir>/model.pdcn
  int model = 8;
  std::uint64_t seed = 42;
  std::size_t batch_size = 8;
  int epochs = 70;
  int epochs_phase2 = 30;
  int patience = 10;
  std::string monitor = "val_loss";
  std::size_t eval_batch_size = 32;
  std::size_t balance_target = 5000;
  SplitRatios split;
  AugmentRanges augment;
  std::string split_name = "test";
  std::string pretrained;

  std::filesystem::path manifest_path() const {
    return manifest.empty() ? std::filesystem::path(workdir) / "manifest.tsv" : std::filesystem::path(manifest);
  }
  std::filesystem::path checkpoint_path() const {
    return checkpoint.empty() ? std::filesystem::path(workdir) / "model.pdcn" : std::filesystem::path(checkpoint);
  }
};

namespace config_detail {

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": '" + v + "' is not a valid number");
  return out;
}

template <>
inline double parse_number<double>(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + v + "' is not a valid number");
  }
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline std::string fmt_double(double d) {
  std::ostringstream os;
  os << std::setprecision(17) << d;
  return os.str();
}

template <class T>
Field number(T RunConfig::*member, T lo) {
  return {[member, lo](RunConfig& c, const std::string& v) {
            const T x = parse_number<T>("value", v);
            if (x < lo) throw ConfigError("value " + v + " is below the minimum " + std::to_string(lo));
            c.*member = x;
          },
          [member](const RunConfig& c) { return std::to_string(c.*member); }};
}

inline Field text(std::string RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& v) { c.*member = v; },
          [member](const RunConfig& c) { return c.*member; }};
}

template <class S>
Field real(S RunConfig::*outer, double S::*member) {
  return {[outer, member](RunConfig& c, const std::string& v) {
            const double x = parse_number<double>("value", v);
            if (!(x >= 0.0)) throw ConfigError("value " + v + " must be non-negative");
            c.*outer.*member = x;
          },
          [outer, member](const RunConfig& c) { return fmt_double(c.*outer.*member); }};
}

inline const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> f = {
      {"annotations", text(&RunConfig::annotations)},
      {"frames", text(&RunConfig::frames)},
      {"workdir", text(&RunConfig::workdir)},
      {"manifest", text(&RunConfig::manifest)},
      {"checkpoint", text(&RunConfig::checkpoint)},
      {"pretrained", text(&RunConfig::pretrained)},
      {"model",
       {[](RunConfig& c, const std::string& v) {
          const int id = parse_number<int>("model", v);
          (void)registry_lookup(id);
          c.model = id;
        },
        [](const RunConfig& c) { return std::to_string(c.model); }}},
      {"seed", number(&RunConfig::seed, std::uint64_t{0})},
      {"batch_size", number(&RunConfig::batch_size, std::size_t{1})},
      {"epochs", number(&RunConfig::epochs, 1)},
      {"epochs_phase2", number(&RunConfig::epochs_phase2, 0)},
      {"patience", number(&RunConfig::patience, 1)},
      {"monitor",
       {[](RunConfig& c, const std::string& v) {
          if (v != "val_loss" && v != "val_accuracy") throw ConfigError("monitor must be val_loss or val_accuracy");
          c.monitor = v;
        },
        [](const RunConfig& c) { return c.monitor; }}},
      {"eval_batch_size", number(&RunConfig::eval_batch_size, std::size_t{1})},
      {"balance_target", number(&RunConfig::balance_target, std::size_t{1})},
      {"split_train", real(&RunConfig::split, &SplitRatios::train)},
      {"split_val", real(&RunConfig::split, &SplitRatios::val)},
      {"split_test", real(&RunConfig::split, &SplitRatios::test)},
      {"aug_flip_prob", real(&RunConfig::augment, &AugmentRanges::flip_prob)},
      {"aug_rotation_deg", real(&RunConfig::augment, &AugmentRanges::rotation_deg)},
      {"aug_shift_frac", real(&RunConfig::augment, &AugmentRanges::shift_frac)},
      {"aug_shear_deg", real(&RunConfig::augment, &AugmentRanges::shear_deg)},
      {"aug_zoom", real(&RunConfig::augment, &AugmentRanges::zoom)},
      {"split", {[](RunConfig& c, const std::string& v) {
                   if (!parse_split(v)) throw ConfigError("split must be train, val or test");
                   c.split_name = v;
                 },
                 [](const RunConfig& c) { return c.split_name; }}},
  };
  return f;
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace config_detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> k;
  for (const auto& [name, _] : config_detail::fields()) k.push_back(name);
  return k;
}

/// Sets one key; unknown keys and malformed values raise ConfigError.
inline void config_set(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& [name, f] : config_detail::fields()) {
    if (name != key) continue;
    try {
      f.set(c, value);
    } catch (const ConfigError& e) {
      throw ConfigError(key + ": " + e.what());
    }
    return;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

/// Parses `key = value` lines; '#' starts a comment.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("config line " + std::to_string(n) + ": expected key = value");
    auto key = config_detail::trim(line.substr(0, eq));
    auto value = config_detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("config line " + std::to_string(n) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

inline void apply_config_text(RunConfig& c, const std::string& text) {
  for (const auto& [k, v] : parse_config_text(text)) config_set(c, k, v);
}

inline void apply_config_file(RunConfig& c, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(c, ss.str());
}

/// Resolved configuration in the same `key = value` syntax, every key listed.
inline std::string format_config(const RunConfig& c) {
  std::string out;
  for (const auto& [name, f] : config_detail::fields()) out += name + " = " + f.get(c) + "\n";
  return out;
}

// Sub-seeds derived from the root seed; each stage derives further streams
// from its own seed (per class, per epoch, per step).
inline std::uint64_t split_seed(const RunConfig& c) { return derive_seed(c.seed, "split", 0); }
inline std::uint64_t balance_seed(const RunConfig& c) { return derive_seed(c.seed, "balance", 0); }
inline std::uint64_t init_seed(const RunConfig& c) { return derive_seed(c.seed, "init", static_cast<std::uint64_t>(c.model)); }
inline std::uint64_t train_seed(const RunConfig& c) { return derive_seed(c.seed, "train", 0); }

}  // namespace pdcn
