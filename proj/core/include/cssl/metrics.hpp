#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "cssl/matrix.hpp"

namespace cssl {

// Mean over testing events of streaming accuracy relative to a matched offline
// reference. Values above 1 are legal.
double omega_all(std::span<const double> streaming_acc, std::span<const double> offline_acc);

struct Prediction {
  int predicted = 0;
  double confidence = 0.0;
  int label = 0;
};

inline constexpr std::size_t kDefaultEceBins = 15;

// Bins are [i/N, (i+1)/N) except the top bin, which also holds confidence 1.0.
std::size_t ece_bin(double confidence, std::size_t num_bins);

// sum_i |bin_i| / N * |acc_i - conf_i|, empty bins contribute nothing.
double ece(std::span<const Prediction> predictions, std::size_t num_bins = kDefaultEceBins);

// Fraction of rows whose label is among the k largest logits. Ties are broken
// toward the lower class index.
double topk_accuracy(std::span<const std::vector<double>> logits, std::span<const int> labels, std::size_t k);

// Rows are true classes, columns predicted classes.
std::vector<std::vector<std::size_t>> confusion(std::span<const int> predicted, std::span<const int> labels,
                                                std::size_t num_classes);

// Prediction file: `#` comment lines, an optional `pred,conf,label` header, then one row per sample.
std::vector<Prediction> load_predictions_csv(const std::filesystem::path& path);

}  // namespace cssl
