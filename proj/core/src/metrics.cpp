#include "cssl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>

#include "cssl/errors.hpp"

namespace cssl {

double omega_all(std::span<const double> streaming_acc, std::span<const double> offline_acc) {
  if (streaming_acc.empty()) throw InputError("omega_all needs at least one testing event");
  if (streaming_acc.size() != offline_acc.size()) {
    throw InputError("omega_all: streaming and offline accuracy lists differ in length");
  }
  double total = 0.0;
  for (std::size_t t = 0; t < streaming_acc.size(); ++t) {
    if (!(offline_acc[t] > 0.0)) throw InputError("omega_all: offline accuracy must be positive");
    total += streaming_acc[t] / offline_acc[t];
  }
  return total / static_cast<double>(streaming_acc.size());
}

std::size_t ece_bin(double confidence, std::size_t num_bins) {
  if (!(confidence >= 0.0 && confidence <= 1.0)) {
    throw InputError("confidence " + std::to_string(confidence) + " outside [0, 1]");
  }
  const auto b = static_cast<std::size_t>(std::floor(confidence * static_cast<double>(num_bins)));
  return std::min(b, num_bins - 1);
}

double ece(std::span<const Prediction> predictions, std::size_t num_bins) {
  if (num_bins < 1) throw InputError("ece needs at least one bin");
  if (predictions.empty()) throw InputError("ece needs at least one prediction");
  std::vector<double> conf_sum(num_bins, 0.0);
  std::vector<double> correct(num_bins, 0.0);
  std::vector<std::size_t> count(num_bins, 0);
  for (const auto& p : predictions) {
    const auto b = ece_bin(p.confidence, num_bins);
    conf_sum[b] += p.confidence;
    correct[b] += (p.predicted == p.label) ? 1.0 : 0.0;
    ++count[b];
  }
  const double n = static_cast<double>(predictions.size());
  double total = 0.0;
  for (std::size_t b = 0; b < num_bins; ++b) {
    if (count[b] == 0) continue;
    const double c = static_cast<double>(count[b]);
    total += (c / n) * std::abs(correct[b] / c - conf_sum[b] / c);
  }
  return total;
}

double topk_accuracy(std::span<const std::vector<double>> logits, std::span<const int> labels, std::size_t k) {
  if (logits.empty()) throw InputError("topk_accuracy on empty input");
  if (logits.size() != labels.size()) throw InputError("topk_accuracy: logits and labels differ in length");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const auto& row = logits[i];
    if (k < 1 || k > row.size()) throw InputError("topk_accuracy: k must lie in [1, K]");
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= row.size()) throw InputError("label out of range");
    const double target = row[static_cast<std::size_t>(y)];
    // Rank of the label: classes scoring higher, or equal with a lower index, come first.
    std::size_t ahead = 0;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (row[c] > target || (row[c] == target && c < static_cast<std::size_t>(y))) ++ahead;
    }
    if (ahead < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(logits.size());
}

std::vector<std::vector<std::size_t>> confusion(std::span<const int> predicted, std::span<const int> labels,
                                                std::size_t num_classes) {
  if (predicted.empty()) throw InputError("confusion on empty input");
  if (predicted.size() != labels.size()) throw InputError("confusion: predictions and labels differ in length");
  std::vector<std::vector<std::size_t>> m(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (labels[i] < 0 || predicted[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes ||
        static_cast<std::size_t>(predicted[i]) >= num_classes) {
      throw InputError("confusion: class index out of range");
    }
    ++m[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(predicted[i])];
  }
  return m;
}

std::vector<Prediction> load_predictions_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open predictions file '" + path.string() + "'");
  std::vector<Prediction> out;
  std::string line;
  std::size_t lineno = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos || line.front() == '#') continue;
    if (std::exchange(first, false) && line.find("pred") != std::string::npos) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    Prediction p;
    if (!(fields >> p.predicted >> p.confidence >> p.label)) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected `pred,conf,label`");
    }
    if (!(p.confidence >= 0.0 && p.confidence <= 1.0)) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": confidence outside [0, 1]");
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace cssl
