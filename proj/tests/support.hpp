#pragma once
// Helpers shared by the unit tests and the acceptance runner.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pdcn/app.hpp"

namespace pdcn::testing {

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("pdcn_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline constexpr std::array<std::array<float, 3>, kNumClasses> kClassColors = {{
    {200, 40, 40},
    {40, 200, 40},
    {40, 40, 200},
    {200, 200, 40},
    {200, 40, 200},
    {40, 200, 200},
}};

/// Solid class colour plus uniform noise in [-noise, noise], clamped and
/// rounded so it survives a PPM round trip unchanged.
inline Image class_image(std::size_t cls, std::uint64_t seed, float noise = 20.0f, std::size_t size = 99) {
  Rng rng(seed);
  std::uniform_real_distribution<float> u(-noise, noise);
  Image img(Shape(std::vector<std::size_t>{size, size, 3}));
  for (std::size_t i = 0; i < size * size; ++i)
    for (std::size_t k = 0; k < 3; ++k)
      img[i * 3 + k] = std::round(std::clamp(kClassColors[cls][k] + u(rng), 0.0f, 255.0f));
  return img;
}

/// Writes per_class images of each class under root/<split>/ and returns
/// their manifest records.
inline std::vector<SampleRecord> write_class_images(const std::filesystem::path& root, Split split,
                                                    std::size_t per_class, std::uint64_t seed) {
  std::vector<SampleRecord> out;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      SampleRecord s;
      s.cls = class_at(c);
      s.split = split;
      s.source_id = static_cast<std::int64_t>(c * 1000 + i);
      s.path = std::string(to_string(split)) + "/" + std::string(class_slug(s.cls)) + "_" + std::to_string(i) + ".ppm";
      save_ppm(class_image(c, derive_seed(seed, std::string(to_string(split)), s.source_id)), root / s.path);
      out.push_back(s);
    }
  }
  return out;
}

/// Toy COCO corpus: `frames_per_class` frames per class, one box each, with
/// frames filled by the class colour inside the box.
inline void write_toy_coco(const std::filesystem::path& dir, std::size_t frames_per_class, std::uint64_t seed) {
  std::filesystem::create_directories(dir / "frames");
  nlohmann::json doc;
  doc["images"] = nlohmann::json::array();
  doc["annotations"] = nlohmann::json::array();
  doc["categories"] = nlohmann::json::array();
  for (std::size_t c = 0; c < kNumClasses; ++c)
    doc["categories"].push_back({{"id", c + 1}, {"name", std::string(kClassNames[c])}});
  std::int64_t id = 1;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    for (std::size_t i = 0; i < frames_per_class; ++i, ++id) {
      Image frame(Shape(std::vector<std::size_t>{60, 80, 3}));
      frame.fill(90.0f);
      const Image patch = class_image(c, derive_seed(seed, "frame", static_cast<std::uint64_t>(id)), 15.0f, 40);
      for (std::size_t y = 0; y < 40; ++y)
        for (std::size_t x = 0; x < 30; ++x)
          for (std::size_t k = 0; k < 3; ++k) frame.at(10 + y, 20 + x, k) = patch.at(y, x, k);
      const std::string name = "f" + std::to_string(id) + ".ppm";
      save_ppm(frame, dir / "frames" / name);
      doc["images"].push_back({{"id", id}, {"file_name", name}, {"width", 80}, {"height", 60}});
      doc["annotations"].push_back(
          {{"id", id}, {"image_id", id}, {"category_id", c + 1}, {"bbox", {20.0, 10.0, 30.0, 40.0}}});
    }
  }
  write_file(dir / "annotations.json", doc.dump());
}

/// Largest violation of |a - n| <= rel * max(|a|, |n|) + abs_floor over a pair
/// of gradient vectors; <= 0 means all entries pass.
inline double grad_violation(const std::vector<double>& analytic, const std::vector<double>& numeric, double rel = 1e-4,
                             double abs_floor = 1e-6) {
  double worst = -1.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double err = std::abs(analytic[i] - numeric[i]);
    const double tol = rel * std::max(std::abs(analytic[i]), std::abs(numeric[i])) + abs_floor;
    worst = std::max(worst, err - tol);
  }
  return worst;
}

/// Central differences of `f` with respect to every entry of `x`.
inline std::vector<double> numeric_grad(TensorD& x, const std::function<double()>& f, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f();
    x[i] = keep - h;
    const double fm = f();
    x[i] = keep;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

inline TensorD random_tensord(const Shape& s, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  TensorD t(s);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

inline Tensor random_tensor(const Shape& s, std::uint64_t seed, float scale = 1.0f) {
  return random_tensord(s, seed, scale).cast<float>();
}

}  // namespace pdcn::testing
