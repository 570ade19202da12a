#pragma once

// Accuracy, precision/recall/F1 and the confusion matrix.

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vrfear/error.hpp"
#include "vrfear/text.hpp"

namespace vrfear {

struct ClassMetrics {
  std::int64_t support = 0;    // true count
  std::int64_t predicted = 0;  // predicted count
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool f1_undefined = false;  // no support and no predictions
};

struct EvalReport {
  int num_classes = 0;
  std::int64_t total = 0;
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  double weighted_f1 = 0.0;
  std::vector<std::vector<std::int64_t>> confusion;  // [truth][prediction]
  std::vector<ClassMetrics> per_class;
};

inline EvalReport evaluate(std::span<const int> predictions, std::span<const int> truths, int num_classes) {
  if (predictions.size() != truths.size()) {
    throw Error("metrics", "length_mismatch", "predictions and truths differ in length");
  }
  if (truths.empty()) throw Error("metrics", "empty_input", "nothing to evaluate");
  if (num_classes < 1) throw Error("metrics", "invalid_classes", "num_classes must be positive");
  EvalReport r;
  r.num_classes = num_classes;
  r.total = static_cast<std::int64_t>(truths.size());
  const auto k = static_cast<std::size_t>(num_classes);
  r.confusion.assign(k, std::vector<std::int64_t>(k, 0));
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const int t = truths[i];
    const int p = predictions[i];
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes) {
      throw Error("metrics", "label_out_of_range", "label at index " + std::to_string(i) + " outside [0, " +
                                                         std::to_string(num_classes - 1) + "]");
    }
    ++r.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }

  std::int64_t hits = 0;
  r.per_class.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    auto& m = r.per_class[c];
    hits += r.confusion[c][c];
    for (std::size_t o = 0; o < k; ++o) {
      m.support += r.confusion[c][o];
      m.predicted += r.confusion[o][c];
    }
    const auto tp = static_cast<double>(r.confusion[c][c]);
    m.precision = m.predicted ? tp / static_cast<double>(m.predicted) : 0.0;
    m.recall = m.support ? tp / static_cast<double>(m.support) : 0.0;
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    m.f1_undefined = m.support == 0 && m.predicted == 0;
  }
  const auto n = static_cast<double>(r.total);
  r.accuracy = static_cast<double>(hits) / n;
  // Support-weighted recall is sum(tp_c)/N, the same quotient as accuracy.
  r.weighted_recall = r.accuracy;
  for (const auto& m : r.per_class) {
    const double w = static_cast<double>(m.support) / n;
    r.macro_precision += m.precision;
    r.macro_recall += m.recall;
    r.macro_f1 += m.f1;
    r.weighted_precision += w * m.precision;
    r.weighted_f1 += w * m.f1;
  }
  r.macro_precision /= static_cast<double>(k);
  r.macro_recall /= static_cast<double>(k);
  r.macro_f1 /= static_cast<double>(k);
  return r;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& m = r.per_class[c];
    per.push_back({{"class", c},
                   {"support", m.support},
                   {"predicted", m.predicted},
                   {"precision", m.precision},
                   {"recall", m.recall},
                   {"f1", m.f1},
                   {"f1_undefined", m.f1_undefined}});
  }
  return {{"num_classes", r.num_classes},
          {"total", r.total},
          {"accuracy", r.accuracy},
          {"macro", {{"precision", r.macro_precision}, {"recall", r.macro_recall}, {"f1", r.macro_f1}}},
          {"weighted", {{"precision", r.weighted_precision}, {"recall", r.weighted_recall}, {"f1", r.weighted_f1}}},
          {"confusion", r.confusion},
          {"per_class", per}};
}

inline std::string report_to_text(const EvalReport& r) {
  std::string out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "accuracy  %.4f  (n=%lld)\n", r.accuracy, static_cast<long long>(r.total));
  out += buf;
  std::snprintf(buf, sizeof buf, "%-10s %9s %9s %9s\n", "average", "precision", "recall", "f1");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-10s %9.4f %9.4f %9.4f\n", "macro", r.macro_precision, r.macro_recall, r.macro_f1);
  out += buf;
  std::snprintf(buf, sizeof buf, "%-10s %9.4f %9.4f %9.4f\n\n", "weighted", r.weighted_precision, r.weighted_recall,
                r.weighted_f1);
  out += buf;
  std::snprintf(buf, sizeof buf, "%-6s %9s %9s %9s %9s\n", "class", "support", "precision", "recall", "f1");
  out += buf;
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const auto& m = r.per_class[c];
    std::snprintf(buf, sizeof buf, "%-6zu %9lld %9.4f %9.4f %9.4f%s\n", c, static_cast<long long>(m.support),
                  m.precision, m.recall, m.f1, m.f1_undefined ? "  (undefined)" : "");
    out += buf;
  }
  out += "\nconfusion (rows = truth, columns = prediction)\n";
  out += "      ";
  for (std::size_t c = 0; c < r.confusion.size(); ++c) {
    std::snprintf(buf, sizeof buf, " %8zu", c);
    out += buf;
  }
  out += '\n';
  for (std::size_t t = 0; t < r.confusion.size(); ++t) {
    std::snprintf(buf, sizeof buf, "%-6zu", t);
    out += buf;
    for (auto v : r.confusion[t]) {
      std::snprintf(buf, sizeof buf, " %8lld", static_cast<long long>(v));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace vrfear
