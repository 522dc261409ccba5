#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdcn/classes.hpp"
#include "pdcn/error.hpp"

namespace pdcn {

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> cells{};

  std::uint64_t& cell(std::size_t t, std::size_t p) { return cells.at(t).at(p); }
  std::uint64_t cell(std::size_t t, std::size_t p) const { return cells.at(t).at(p); }

  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (const auto& r : cells)
      for (auto v : r) s += v;
    return s;
  }
  std::uint64_t trace() const {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < kNumClasses; ++i) s += cells[i][i];
    return s;
  }
  std::uint64_t tp(std::size_t c) const { return cells[c][c]; }
  std::uint64_t fp(std::size_t c) const {
    std::uint64_t s = 0;
    for (std::size_t t = 0; t < kNumClasses; ++t) s += cells[t][c];
    return s - tp(c);
  }
  std::uint64_t fn(std::size_t c) const {
    std::uint64_t s = 0;
    for (auto v : cells[c]) s += v;
    return s - tp(c);
  }
  std::uint64_t tn(std::size_t c) const { return total() - tp(c) - fp(c) - fn(c); }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion(std::span<const DemographicClass> y_true, std::span<const DemographicClass> y_pred) {
  if (y_true.size() != y_pred.size())
    throw MetricError("label count mismatch: " + std::to_string(y_true.size()) + " true vs " +
                      std::to_string(y_pred.size()) + " predicted");
  if (y_true.empty()) throw MetricError("no samples to evaluate");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < y_true.size(); ++i) ++cm.cell(index_of(y_true[i]), index_of(y_pred[i]));
  return cm;
}

inline double accuracy(const ConfusionMatrix& cm) {
  const auto n = cm.total();
  if (n == 0) throw MetricError("accuracy of an empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(n);
}

struct ClassMetrics {
  double precision = 0, recall = 0, f1 = 0;
  std::uint64_t support = 0;
};

struct PerClassMetrics {
  std::array<ClassMetrics, kNumClasses> classes{};
};

namespace metrics_detail {
inline double ratio(std::uint64_t a, std::uint64_t b) {
  return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
}
inline double f1(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }
}  // namespace metrics_detail

/// Zero denominators yield 0.
inline PerClassMetrics per_class(const ConfusionMatrix& cm) {
  PerClassMetrics m;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    auto& k = m.classes[c];
    k.precision = metrics_detail::ratio(cm.tp(c), cm.tp(c) + cm.fp(c));
    k.recall = metrics_detail::ratio(cm.tp(c), cm.tp(c) + cm.fn(c));
    k.f1 = metrics_detail::f1(k.precision, k.recall);
    k.support = cm.tp(c) + cm.fn(c);
  }
  return m;
}

struct Averages {
  double precision = 0, recall = 0, f1 = 0;
};

struct Aggregate {
  Averages macro;
  Averages weighted;
};

/// Macro: unweighted mean over every class. Weighted: support-weighted mean.
inline Aggregate aggregate(const PerClassMetrics& m) {
  Aggregate a;
  std::uint64_t support = 0;
  for (const auto& k : m.classes) support += k.support;
  if (support == 0) throw MetricError("weighted average undefined: every support is zero");
  const double n = static_cast<double>(kNumClasses);
  for (const auto& k : m.classes) {
    a.macro.precision += k.precision;
    a.macro.recall += k.recall;
    a.macro.f1 += k.f1;
    const double s = static_cast<double>(k.support);
    a.weighted.precision += s * k.precision;
    a.weighted.recall += s * k.recall;
    a.weighted.f1 += s * k.f1;
  }
  a.macro.precision /= n;
  a.macro.recall /= n;
  a.macro.f1 /= n;
  const double s = static_cast<double>(support);
  a.weighted.precision /= s;
  a.weighted.recall /= s;
  a.weighted.f1 /= s;
  return a;
}

// ---------------------------------------------------------------------------
// Precision-recall

struct PRPoint {
  double threshold = 0, recall = 0, precision = 0;
};

struct PRCurve {
  DemographicClass cls = DemographicClass::female_adult;
  std::vector<PRPoint> points;  // threshold descending
  std::optional<double> average_precision;  // empty when the class has no positives
};

using ScoreRow = std::array<double, kNumClasses>;

inline void check_scores(std::span<const ScoreRow> scores, std::size_t n_true) {
  if (scores.size() != n_true) throw MetricError("score/label count mismatch");
  if (scores.empty()) throw MetricError("no samples to evaluate");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = std::accumulate(scores[i].begin(), scores[i].end(), 0.0);
    if (std::abs(s - 1.0) > 1e-5) throw MetricError("score row " + std::to_string(i) + " does not sum to 1");
  }
}

/// One-vs-rest sweep over every distinct class-c score, high to low; a sample
/// counts as positive when its score is >= the threshold. Average precision
/// is the step sum of recall increments times precision, with consecutive
/// increments at equal precision merged before multiplying.
inline PRCurve pr_curve(std::span<const ScoreRow> scores, std::span<const DemographicClass> y_true,
                        DemographicClass c) {
  check_scores(scores, y_true.size());
  const std::size_t ci = index_of(c);
  std::vector<std::pair<double, bool>> s;
  std::uint64_t positives = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pos = y_true[i] == c;
    positives += pos;
    s.emplace_back(scores[i][ci], pos);
  }
  std::sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  PRCurve curve;
  curve.cls = c;
  std::uint64_t tp = 0, fp = 0;
  // Pending merged step: recall increment in true positives, at precision tp/(tp+fp).
  std::uint64_t group_dtp = 0, group_tp = 0, group_n = 0;
  double ap = 0.0;
  auto flush = [&] {
    if (group_dtp == 0) return;
    const double dr = static_cast<double>(group_dtp) / static_cast<double>(positives);
    ap += dr * (static_cast<double>(group_tp) / static_cast<double>(group_n));
    group_dtp = 0;
  };
  for (std::size_t i = 0; i < s.size();) {
    const double thr = s[i].first;
    std::uint64_t dtp = 0;
    while (i < s.size() && s[i].first == thr) {
      if (s[i].second)
        ++dtp;
      else
        ++fp;
      ++i;
    }
    tp += dtp;
    const double recall = positives ? static_cast<double>(tp) / static_cast<double>(positives) : 0.0;
    curve.points.push_back({thr, recall, static_cast<double>(tp) / static_cast<double>(tp + fp)});
    if (dtp == 0) continue;
    // tp/(tp+fp) == group_tp/group_n, compared exactly in integers
    if (group_dtp > 0 && tp * group_n != group_tp * (tp + fp)) flush();
    group_dtp += dtp;
    group_tp = tp;
    group_n = tp + fp;
  }
  flush();
  if (positives > 0) curve.average_precision = ap;
  return curve;
}

inline std::size_t argmax(const ScoreRow& row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < kNumClasses; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

// ---------------------------------------------------------------------------
// Report

struct MetricsReport {
  int model_id = 0;
  double accuracy = 0;
  ConfusionMatrix confusion_matrix;
  PerClassMetrics per_class;
  Averages macro_avg;
  Averages weighted_avg;
  std::array<std::optional<double>, kNumClasses> pr_auc_per_class{};
  std::optional<double> pr_auc_macro;
  std::vector<PRCurve> pr_curves;  // not part of the JSON form

  /// Classes left out of the macro PR-AUC for lack of positives.
  std::vector<DemographicClass> pr_auc_excluded() const {
    std::vector<DemographicClass> out;
    for (std::size_t c = 0; c < kNumClasses; ++c)
      if (!pr_auc_per_class[c]) out.push_back(class_at(c));
    return out;
  }
};

inline MetricsReport build_report(int model_id, std::span<const ScoreRow> scores,
                                  std::span<const DemographicClass> y_true) {
  check_scores(scores, y_true.size());
  std::vector<DemographicClass> pred;
  for (const auto& row : scores) pred.push_back(class_at(argmax(row)));
  MetricsReport r;
  r.model_id = model_id;
  r.confusion_matrix = confusion(y_true, pred);
  r.accuracy = accuracy(r.confusion_matrix);
  r.per_class = per_class(r.confusion_matrix);
  const auto agg = aggregate(r.per_class);
  r.macro_avg = agg.macro;
  r.weighted_avg = agg.weighted;
  double sum = 0;
  std::size_t defined = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    r.pr_curves.push_back(pr_curve(scores, y_true, class_at(c)));
    r.pr_auc_per_class[c] = r.pr_curves.back().average_precision;
    if (r.pr_auc_per_class[c]) {
      sum += *r.pr_auc_per_class[c];
      ++defined;
    }
  }
  if (defined > 0) r.pr_auc_macro = sum / static_cast<double>(defined);
  return r;
}

namespace metrics_detail {
inline nlohmann::json averages_json(const Averages& a) {
  return {{"precision", a.precision}, {"recall", a.recall}, {"f1", a.f1}};
}
inline Averages averages_from(const nlohmann::json& j) {
  return {j.at("precision").get<double>(), j.at("recall").get<double>(), j.at("f1").get<double>()};
}
inline nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }
inline std::optional<double> opt_from(const nlohmann::json& j) {
  return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}
}  // namespace metrics_detail

inline nlohmann::json report_to_json(const MetricsReport& r) {
  using namespace metrics_detail;
  nlohmann::json j;
  j["model_id"] = r.model_id;
  j["accuracy"] = r.accuracy;
  j["class_order"] = nlohmann::json::array();
  for (auto n : kClassNames) j["class_order"].push_back(std::string(n));
  j["confusion_matrix"] = nlohmann::json::array();
  for (const auto& row : r.confusion_matrix.cells) j["confusion_matrix"].push_back(row);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const auto& k = r.per_class.classes[c];
    const std::string name(kClassNames[c]);
    j["per_class"][name] = {{"precision", k.precision}, {"recall", k.recall}, {"f1", k.f1}, {"support", k.support}};
    j["pr_auc_per_class"][name] = opt_json(r.pr_auc_per_class[c]);
  }
  j["macro_avg"] = averages_json(r.macro_avg);
  j["weighted_avg"] = averages_json(r.weighted_avg);
  j["pr_auc_macro"] = opt_json(r.pr_auc_macro);
  j["pr_auc_excluded"] = nlohmann::json::array();
  for (auto c : r.pr_auc_excluded()) j["pr_auc_excluded"].push_back(std::string(class_name(c)));
  return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  using namespace metrics_detail;
  try {
    MetricsReport r;
    r.model_id = j.at("model_id").get<int>();
    r.accuracy = j.at("accuracy").get<double>();
    const auto& cm = j.at("confusion_matrix");
    if (cm.size() != kNumClasses) throw MetricError("report: confusion matrix must be 6x6");
    for (std::size_t t = 0; t < kNumClasses; ++t) {
      if (cm[t].size() != kNumClasses) throw MetricError("report: confusion matrix must be 6x6");
      for (std::size_t p = 0; p < kNumClasses; ++p) r.confusion_matrix.cell(t, p) = cm[t][p].get<std::uint64_t>();
    }
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const std::string name(kClassNames[c]);
      const auto& k = j.at("per_class").at(name);
      r.per_class.classes[c] = {k.at("precision").get<double>(), k.at("recall").get<double>(),
                                k.at("f1").get<double>(), k.at("support").get<std::uint64_t>()};
      r.pr_auc_per_class[c] = opt_from(j.at("pr_auc_per_class").at(name));
    }
    r.macro_avg = averages_from(j.at("macro_avg"));
    r.weighted_avg = averages_from(j.at("weighted_avg"));
    r.pr_auc_macro = opt_from(j.at("pr_auc_macro"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw MetricError(std::string("malformed report: ") + e.what());
  }
}

inline std::string serialize_report(const MetricsReport& r) { return report_to_json(r).dump(2) + "\n"; }

inline MetricsReport parse_report(const std::string& text) {
  try {
    return report_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw MetricError(std::string("malformed report: ") + e.what());
  }
}

/// CSV with columns class, threshold, recall, precision; one section per class.
inline std::string pr_curves_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "class,threshold,recall,precision\n" << std::setprecision(10);
  for (const auto& c : r.pr_curves)
    for (const auto& p : c.points) os << class_name(c.cls) << ',' << p.threshold << ',' << p.recall << ',' << p.precision << '\n';
  return os.str();
}

}  // namespace pdcn
