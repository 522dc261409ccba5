#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdcn/augment.hpp"
#include "pdcn/classes.hpp"
#include "pdcn/image.hpp"
#include "pdcn/rng.hpp"

namespace pdcn {

// ---------------------------------------------------------------------------
// COCO ingest

struct BoundingBox {
  double x = 0, y = 0, width = 0, height = 0;
};

struct AnnotationRecord {
  std::int64_t annotation_id = 0;
  std::int64_t image_id = 0;
  std::string file_name;
  std::size_t image_width = 0;   // 0 when the document omits it
  std::size_t image_height = 0;
  BoundingBox bbox;
  DemographicClass cls = DemographicClass::female_adult;
};

struct CocoParseResult {
  std::vector<AnnotationRecord> records;  // sorted by annotation id
  std::size_t skipped_missing_bbox = 0;
};

/// Parses a COCO document (images / annotations / categories arrays). Category
/// names are matched case-insensitively to the six classes; an annotation
/// whose category name matches none of them is an IngestError.
inline CocoParseResult parse_coco(const std::string& document) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(document);
  } catch (const nlohmann::json::exception& e) {
    throw IngestError(std::string("COCO document is not valid JSON: ") + e.what());
  }
  for (const char* key : {"images", "annotations", "categories"}) {
    if (!doc.contains(key) || !doc[key].is_array())
      throw IngestError(std::string("COCO document lacks the '") + key + "' array");
  }
  struct ImageInfo {
    std::string file;
    std::size_t w = 0, h = 0;
  };
  std::map<std::int64_t, ImageInfo> images;
  for (const auto& im : doc["images"]) {
    ImageInfo info;
    info.file = im.at("file_name").get<std::string>();
    if (im.contains("width")) info.w = im["width"].get<std::size_t>();
    if (im.contains("height")) info.h = im["height"].get<std::size_t>();
    images[im.at("id").get<std::int64_t>()] = info;
  }
  std::map<std::int64_t, std::string> categories;
  for (const auto& c : doc["categories"]) categories[c.at("id").get<std::int64_t>()] = c.at("name").get<std::string>();

  CocoParseResult out;
  std::vector<std::string> unknown;
  for (const auto& a : doc["annotations"]) {
    if (!a.contains("bbox") || !a["bbox"].is_array() || a["bbox"].size() != 4) {
      ++out.skipped_missing_bbox;
      continue;
    }
    AnnotationRecord r;
    r.annotation_id = a.at("id").get<std::int64_t>();
    r.image_id = a.at("image_id").get<std::int64_t>();
    const auto img = images.find(r.image_id);
    if (img == images.end()) throw IngestError("annotation " + std::to_string(r.annotation_id) + " refers to unknown image");
    r.file_name = img->second.file;
    r.image_width = img->second.w;
    r.image_height = img->second.h;
    const auto& b = a["bbox"];
    r.bbox = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
    const auto cat = categories.find(a.at("category_id").get<std::int64_t>());
    if (cat == categories.end()) throw IngestError("annotation " + std::to_string(r.annotation_id) + " has an unknown category id");
    const auto cls = parse_class(cat->second);
    if (!cls) {
      if (std::find(unknown.begin(), unknown.end(), cat->second) == unknown.end()) unknown.push_back(cat->second);
      continue;
    }
    r.cls = *cls;
    out.records.push_back(std::move(r));
  }
  if (!unknown.empty()) {
    std::string names;
    for (const auto& n : unknown) names += (names.empty() ? "'" : ", '") + n + "'";
    throw IngestError("unknown category name(s): " + names);
  }
  std::sort(out.records.begin(), out.records.end(),
            [](const auto& a, const auto& b) { return a.annotation_id < b.annotation_id; });
  return out;
}

/// Crops the annotated box (clamped to the frame) and resizes it to 99x99.
inline Image crop_and_resize(const Image& frame, const AnnotationRecord& rec, std::size_t out_size = 99) {
  if (frame.rank() != 3 || frame.dim(2) != 3) throw CropError("frame must be an (H, W, 3) image");
  const auto box = clamp_box(rec.bbox.x, rec.bbox.y, rec.bbox.width, rec.bbox.height, frame.dim(1), frame.dim(0));
  return resize_bilinear(crop(frame, box), out_size, out_size);
}

// ---------------------------------------------------------------------------
// Manifest

enum class Split { train, val, test };
enum class Origin { original, augmented };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}
inline std::string_view to_string(Origin o) { return o == Origin::original ? "original" : "augmented"; }

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  return std::nullopt;
}

struct SampleRecord {
  std::string path;  // relative to the manifest directory
  DemographicClass cls = DemographicClass::female_adult;
  Split split = Split::train;
  Origin origin = Origin::original;
  std::int64_t source_id = 0;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

using ClassCounts = std::array<std::size_t, kNumClasses>;

struct DatasetManifest {
  std::vector<SampleRecord> samples;

  ClassCounts counts(Split split) const {
    ClassCounts c{};
    for (const auto& s : samples)
      if (s.split == split) ++c[index_of(s.cls)];
    return c;
  }

  std::vector<SampleRecord> split(Split which) const {
    std::vector<SampleRecord> out;
    for (const auto& s : samples)
      if (s.split == which) out.push_back(s);
    return out;
  }

  /// Canonical order: split, class, origin, source id, path.
  void sort() {
    std::sort(samples.begin(), samples.end(), [](const SampleRecord& a, const SampleRecord& b) {
      return std::tie(a.split, a.cls, a.origin, a.source_id, a.path) <
             std::tie(b.split, b.cls, b.origin, b.source_id, b.path);
    });
  }
};

inline constexpr std::string_view kManifestHeader = "# pdcn-manifest v1";

inline std::string format_manifest(const DatasetManifest& m) {
  std::ostringstream os;
  os << kManifestHeader << '\n' << "# path\tclass\tsplit\torigin\tsource_id\n";
  for (const auto& s : m.samples)
    os << s.path << '\t' << class_slug(s.cls) << '\t' << to_string(s.split) << '\t' << to_string(s.origin) << '\t'
       << s.source_id << '\n';
  return os.str();
}

inline DatasetManifest parse_manifest(const std::string& text) {
  DatasetManifest m;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (line != kManifestHeader) throw ParseError("line 1: missing manifest header");
      header = true;
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == '\t') {
        f.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (f.size() != 5) throw ParseError(where + "expected 5 tab-separated fields, got " + std::to_string(f.size()));
    SampleRecord r;
    if (f[0].empty()) throw ParseError(where + "empty path");
    r.path = f[0];
    const auto cls = parse_class(f[1]);
    if (!cls) throw ParseError(where + "unknown class '" + f[1] + "'");
    r.cls = *cls;
    const auto sp = parse_split(f[2]);
    if (!sp) throw ParseError(where + "unknown split '" + f[2] + "'");
    r.split = *sp;
    if (f[3] == "original")
      r.origin = Origin::original;
    else if (f[3] == "augmented")
      r.origin = Origin::augmented;
    else
      throw ParseError(where + "unknown origin '" + f[3] + "'");
    try {
      std::size_t used = 0;
      r.source_id = std::stoll(f[4], &used);
      if (used != f[4].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError(where + "bad source id '" + f[4] + "'");
    }
    m.samples.push_back(std::move(r));
  }
  if (!header) throw ParseError("line 1: missing manifest header");
  return m;
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path.string() + ": cannot write manifest");
  out << format_manifest(m);
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string() + ": cannot read manifest");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str());
}

// ---------------------------------------------------------------------------
// Split and balance

struct SplitRatios {
  double train = 0.7;
  double val = 0.2;
  double test = 0.1;
};

/// Per-class (train, val, test) counts: floor, floor, remainder.
inline std::array<std::size_t, 3> split_counts(std::size_t n, const SplitRatios& r) {
  // The small epsilon keeps exact products such as 10 * 0.7 from flooring
  // one below the integer they represent.
  const auto tr = static_cast<std::size_t>(std::floor(static_cast<double>(n) * r.train + 1e-9));
  const auto va = static_cast<std::size_t>(std::floor(static_cast<double>(n) * r.val + 1e-9));
  return {tr, va, n - tr - va};
}

/// Class-wise seeded shuffle then contiguous train/val/test assignment.
inline DatasetManifest stratified_split(std::vector<SampleRecord> records, const SplitRatios& ratios,
                                        std::uint64_t seed) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
    throw SplitError("split ratios must be non-negative and sum to 1");
  std::array<std::vector<SampleRecord>, kNumClasses> by_class;
  for (auto& r : records) by_class[index_of(r.cls)].push_back(std::move(r));
  DatasetManifest m;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    auto& v = by_class[c];
    if (v.empty()) continue;
    if (v.size() < 3)
      throw SplitError("class " + std::string(kClassNames[c]) + " has " + std::to_string(v.size()) +
                       " sample(s); at least 3 are needed for three splits");
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.source_id < b.source_id; });
    Rng rng(derive_seed(seed, "split", c));
    std::shuffle(v.begin(), v.end(), rng);
    const auto counts = split_counts(v.size(), ratios);
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i].split = i < counts[0] ? Split::train : (i < counts[0] + counts[1] ? Split::val : Split::test);
      m.samples.push_back(std::move(v[i]));
    }
  }
  m.sort();
  return m;
}

/// One augmented crop to materialize: read `source`, warp with `params`, write `target`.
struct AugmentJob {
  std::string source;
  std::string target;
  AugmentParams params;
};

struct BalancePlan {
  DatasetManifest manifest;
  std::vector<AugmentJob> jobs;
};

/// Brings every class of the train split to exactly `target` samples: larger
/// classes keep a seeded random subset of originals; smaller ones keep all
/// originals and receive augmented copies, assigned round-robin over the
/// originals with a fresh parameter draw each. Val/test are untouched.
inline BalancePlan plan_balance(const DatasetManifest& manifest, std::size_t target, std::uint64_t seed,
                                const AugmentRanges& ranges = {}) {
  if (target < 1) throw BalanceError("balance target must be >= 1");
  BalancePlan plan;
  std::array<std::vector<SampleRecord>, kNumClasses> train;
  for (const auto& s : manifest.samples) {
    if (s.split != Split::train) {
      plan.manifest.samples.push_back(s);
    } else if (s.origin == Origin::original) {
      train[index_of(s.cls)].push_back(s);
    }
  }
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    auto& v = train[c];
    if (v.empty()) throw BalanceError("class " + std::string(kClassNames[c]) + " has no training originals");
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.source_id < b.source_id; });
    if (v.size() >= target) {
      Rng rng(derive_seed(seed, "downsample", c));
      std::shuffle(v.begin(), v.end(), rng);
      v.resize(target);
      for (auto& s : v) plan.manifest.samples.push_back(s);
      continue;
    }
    for (const auto& s : v) plan.manifest.samples.push_back(s);
    Rng rng(derive_seed(seed, "augment", c));
    const std::size_t extra = target - v.size();
    for (std::size_t k = 0; k < extra; ++k) {
      const auto& src = v[k % v.size()];
      const std::size_t copy = k / v.size();
      SampleRecord aug = src;
      aug.origin = Origin::augmented;
      const std::filesystem::path p(src.path);
      aug.path = (p.parent_path() / (p.stem().string() + "_aug" + std::to_string(copy) + p.extension().string()))
                     .generic_string();
      plan.jobs.push_back({src.path, aug.path, sample_augment(ranges, rng)});
      plan.manifest.samples.push_back(std::move(aug));
    }
  }
  plan.manifest.sort();
  return plan;
}

/// Writes every augmented crop of a plan under `base_dir`.
inline void materialize(const BalancePlan& plan, const std::filesystem::path& base_dir) {
  std::map<std::string, Image> cache;
  for (const auto& job : plan.jobs) {
    auto it = cache.find(job.source);
    if (it == cache.end()) it = cache.emplace(job.source, load_image(base_dir / job.source)).first;
    save_ppm(augment(it->second, job.params), base_dir / job.target);
  }
}

/// plan_balance followed by materialize.
inline DatasetManifest balance_train(const DatasetManifest& manifest, std::size_t target, std::uint64_t seed,
                                     const std::filesystem::path& base_dir, const AugmentRanges& ranges = {}) {
  auto plan = plan_balance(manifest, target, seed, ranges);
  materialize(plan, base_dir);
  return std::move(plan.manifest);
}

/// True when every class has exactly `target` train samples and no augmented
/// sample sits outside the train split.
inline bool is_balanced(const DatasetManifest& m, std::size_t target) {
  for (auto c : m.counts(Split::train))
    if (c != target) return false;
  for (const auto& s : m.samples)
    if (s.origin == Origin::augmented && s.split != Split::train) return false;
  return true;
}

}  // namespace pdcn
