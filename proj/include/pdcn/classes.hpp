#pragma once

#include <array>
#include <cctype>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace pdcn {

/// The six joint age/gender classes, in alphabetical index order. This order
/// is shared by manifests, model outputs, confusion matrices and reports.
enum class DemographicClass : std::size_t {
  female_adult = 0,
  female_child,
  female_teenager,
  male_adult,
  male_child,
  male_teenager,
};

inline constexpr std::size_t kNumClasses = 6;

inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "Female Adult", "Female Child", "Female Teenager", "Male Adult", "Male Child", "Male Teenager",
};

/// Directory / manifest token for each class.
inline constexpr std::array<std::string_view, kNumClasses> kClassSlugs = {
    "female_adult", "female_child", "female_teenager", "male_adult", "male_child", "male_teenager",
};

constexpr std::size_t index_of(DemographicClass c) { return static_cast<std::size_t>(c); }
constexpr DemographicClass class_at(std::size_t i) { return static_cast<DemographicClass>(i); }
inline std::string_view class_name(DemographicClass c) { return kClassNames[index_of(c)]; }
inline std::string_view class_slug(DemographicClass c) { return kClassSlugs[index_of(c)]; }

/// Case-insensitive lookup; spaces, underscores and hyphens are interchangeable.
inline std::optional<DemographicClass> parse_class(std::string_view text) {
  std::string norm;
  bool pending_space = false;
  for (char ch : text) {
    if (ch == ' ' || ch == '_' || ch == '-' || ch == '\t') {
      pending_space = !norm.empty();
      continue;
    }
    if (pending_space) norm.push_back('_');
    pending_space = false;
    norm.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  for (std::size_t i = 0; i < kNumClasses; ++i)
    if (norm == kClassSlugs[i]) return class_at(i);
  return std::nullopt;
}

}  // namespace pdcn
