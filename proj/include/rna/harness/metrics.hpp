// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace rna::harness {

/// Rows are true classes, columns predictions. Pixels labelled `ignore` are
/// skipped.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes, int ignore = 255);

  void add(int label, int prediction);
  void add(std::span<const int> labels, std::span<const int> predictions);
  void add(std::span<const std::uint8_t> labels, std::span<const std::uint8_t> predictions);

  std::size_t classes() const { return n_; }
  std::uint64_t at(std::size_t label, std::size_t prediction) const {
    return counts_[label * n_ + prediction];
  }
  std::uint64_t total() const { return total_; }

 private:
  std::size_t n_;
  int ignore_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

/// Percentages. Mean accuracy averages over classes present in the labels;
/// mean IoU averages TP / (TP + FP + FN) over classes present in the labels
/// or the predictions (classes absent from both are excluded).
struct SegScores {
  double pixel_acc = 0.0;
  double mean_acc = 0.0;
  double mean_iou = 0.0;
  std::vector<double> iou;  // per class, NaN when excluded
};

SegScores seg_scores(const ConfusionMatrix& cm);

/// Percentage of exact matches.
double accuracy(std::span<const int> labels, std::span<const int> predictions);

}  // namespace rna::harness
