#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "intentctx/classifier.hpp"
#include "intentctx/error.hpp"
#include "intentctx/model.hpp"

namespace intentctx {

/// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0) : classes_(classes), counts_(classes * classes, 0) {}

  static ConfusionMatrix from_pairs(std::size_t classes, const std::vector<LabelId>& truth,
                                    const std::vector<LabelId>& predicted) {
    if (truth.size() != predicted.size()) throw ValidationError("truth and prediction counts differ");
    ConfusionMatrix m(classes);
    for (std::size_t i = 0; i < truth.size(); ++i) m.add(truth[i], predicted[i]);
    return m;
  }

  static ConfusionMatrix from_rows(const std::vector<std::vector<std::size_t>>& rows) {
    ConfusionMatrix m(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != rows.size()) throw ValidationError("confusion matrix must be square");
      for (std::size_t c = 0; c < rows.size(); ++c) m.at(r, c) = rows[r][c];
    }
    return m;
  }

  void add(LabelId truth, LabelId predicted) {
    if (truth >= classes_ || predicted >= classes_) throw ValidationError("label outside the confusion matrix");
    ++at(truth, predicted);
  }

  std::size_t classes() const { return classes_; }
  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * classes_ + predicted]; }
  std::size_t& at(std::size_t truth, std::size_t predicted) { return counts_[truth * classes_ + predicted]; }

  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts_) n += c;
    return n;
  }

  std::size_t trace() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < classes_; ++i) n += at(i, i);
    return n;
  }

  std::size_t row_sum(std::size_t r) const {
    std::size_t n = 0;
    for (std::size_t c = 0; c < classes_; ++c) n += at(r, c);
    return n;
  }

  std::size_t col_sum(std::size_t c) const {
    std::size_t n = 0;
    for (std::size_t r = 0; r < classes_; ++r) n += at(r, c);
    return n;
  }

  nlohmann::json to_json(const std::vector<std::string>& labels) const {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < classes_; ++r) {
      std::vector<std::size_t> row(counts_.begin() + static_cast<std::ptrdiff_t>(r * classes_),
                                   counts_.begin() + static_cast<std::ptrdiff_t>((r + 1) * classes_));
      rows.push_back(row);
    }
    return {{"labels", labels}, {"rows", "true"}, {"columns", "predicted"}, {"matrix", rows}};
  }

 private:
  std::size_t classes_;
  std::vector<std::size_t> counts_;
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct AveragedMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricsReport {
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  AveragedMetrics macro;
  AveragedMetrics weighted;  // weighted by true-class support
  /// Classes whose precision or recall hit a zero denominator and were set to 0.
  std::vector<std::size_t> zero_division_classes;
};

/// Precision/recall of a class with no predicted/true instances is 0; such classes
/// still count in the macro mean.
inline MetricsReport compute_metrics(const ConfusionMatrix& m) {
  const auto total = m.total();
  if (total == 0) throw ValidationError("no evaluated samples");
  MetricsReport r;
  r.accuracy = static_cast<double>(m.trace()) / static_cast<double>(total);
  const auto classes = m.classes();
  for (std::size_t c = 0; c < classes; ++c) {
    ClassMetrics cm;
    const auto tp = static_cast<double>(m.at(c, c));
    const auto predicted = m.col_sum(c);
    cm.support = m.row_sum(c);
    bool flagged = false;
    if (predicted > 0) {
      cm.precision = tp / static_cast<double>(predicted);
    } else {
      flagged = true;
    }
    if (cm.support > 0) {
      cm.recall = tp / static_cast<double>(cm.support);
    } else {
      flagged = true;
    }
    cm.f1 = (cm.precision + cm.recall) > 0 ? 2 * cm.precision * cm.recall / (cm.precision + cm.recall) : 0.0;
    if (flagged) r.zero_division_classes.push_back(c);
    r.macro.precision += cm.precision / static_cast<double>(classes);
    r.macro.recall += cm.recall / static_cast<double>(classes);
    r.macro.f1 += cm.f1 / static_cast<double>(classes);
    const double share = static_cast<double>(cm.support) / static_cast<double>(total);
    r.weighted.precision += cm.precision * share;
    r.weighted.recall += cm.recall * share;
    r.weighted.f1 += cm.f1 * share;
    r.per_class.push_back(cm);
  }
  return r;
}

struct EvaluationResult {
  ConfusionMatrix confusion;
  MetricsReport report;
  std::vector<LabelId> predictions;
};

/// Eval-mode inference over `data` and the resulting metrics.
inline EvaluationResult evaluate(const Model& model, const Dataset& data) {
  if (data.empty()) throw ValidationError("cannot evaluate an empty sample set");
  const Matrix logits = model.logits(data);
  EvaluationResult out{ConfusionMatrix(model.num_classes()), {}, {}};
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].label >= model.num_classes()) throw ValidationError("sample label exceeds the model's class count");
    const auto p = predict(logits.row(static_cast<Eigen::Index>(i)).transpose()).label;
    out.predictions.push_back(p);
    out.confusion.add(data[i].label, p);
  }
  out.report = compute_metrics(out.confusion);
  return out;
}

inline constexpr const char* kMetricsCsvHeader =
    "strategy,accuracy,recall_macro,precision_macro,f1_macro,recall_weighted,precision_weighted,f1_weighted\n";

inline std::string metrics_csv_row(std::string_view strategy, const MetricsReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.*s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", static_cast<int>(strategy.size()),
                strategy.data(), r.accuracy, r.macro.recall, r.macro.precision, r.macro.f1, r.weighted.recall,
                r.weighted.precision, r.weighted.f1);
  return buf;
}

}  // namespace intentctx
