#pragma once

#include <cstddef>
#include <cstdio>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pesco/errors.hpp"

namespace pesco {

struct EvalResult {
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [gold][pred]
  std::vector<double> precision;                    // per predicted class
  std::vector<double> recall;                       // per gold class
  std::size_t documents = 0;
};

// Exact counting. Confusion is indexed [gold][pred] — not the transpose.
inline EvalResult evaluate(std::span<const int> predictions, std::span<const int> golds,
                           std::size_t num_classes) {
  if (predictions.size() != golds.size())
    throw ShapeError("predictions (" + std::to_string(predictions.size()) + ") and golds (" +
                     std::to_string(golds.size()) + ") differ in length");
  if (predictions.empty()) throw ShapeError("evaluate requires at least one document");

  EvalResult result;
  result.documents = predictions.size();
  result.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int pred = predictions[i], gold = golds[i];
    if (pred < 0 || static_cast<std::size_t>(pred) >= num_classes)
      throw LabelRangeError("prediction out of range: " + std::to_string(pred));
    if (gold < 0 || static_cast<std::size_t>(gold) >= num_classes)
      throw LabelRangeError("gold label out of range: " + std::to_string(gold));
    ++result.confusion[static_cast<std::size_t>(gold)][static_cast<std::size_t>(pred)];
  }

  std::size_t diagonal = 0;
  result.precision.assign(num_classes, 0.0);
  result.recall.assign(num_classes, 0.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    diagonal += result.confusion[c][c];
    std::size_t gold_total = 0, pred_total = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
      gold_total += result.confusion[c][k];
      pred_total += result.confusion[k][c];
    }
    result.recall[c] = gold_total ? static_cast<double>(result.confusion[c][c]) /
                                        static_cast<double>(gold_total)
                                  : 0.0;
    result.precision[c] = pred_total ? static_cast<double>(result.confusion[c][c]) /
                                           static_cast<double>(pred_total)
                                     : 0.0;
  }
  result.accuracy = static_cast<double>(diagonal) / static_cast<double>(result.documents);
  return result;
}

// Line-delimited key/value records followed by a plain-text confusion table.
inline std::string format_eval_result(const EvalResult& result) {
  std::ostringstream out;
  char buffer[96];
  std::snprintf(buffer, sizeof buffer, "accuracy=%.6f", result.accuracy);
  out << buffer << "\ndocuments=" << result.documents << '\n';
  for (std::size_t c = 0; c < result.precision.size(); ++c) {
    std::snprintf(buffer, sizeof buffer, "class=%zu precision=%.6f recall=%.6f", c,
                  result.precision[c], result.recall[c]);
    out << buffer << '\n';
  }
  out << "confusion (rows=gold, cols=pred):\n";
  for (const auto& row : result.confusion) {
    for (std::size_t k = 0; k < row.size(); ++k) out << (k ? " " : "") << row[k];
    out << '\n';
  }
  return out.str();
}

}  // namespace pesco
