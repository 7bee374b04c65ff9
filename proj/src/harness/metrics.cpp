// SPDX-License-Identifier: Apache-2.0
#include "rna/harness/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace rna::harness {

ConfusionMatrix::ConfusionMatrix(std::size_t classes, int ignore)
    : n_(classes), ignore_(ignore), counts_(classes * classes, 0) {
  if (classes == 0) throw std::invalid_argument("confusion matrix needs classes");
}

void ConfusionMatrix::add(int label, int prediction) {
  if (label == ignore_) return;
  if (label < 0 || static_cast<std::size_t>(label) >= n_) {
    throw std::out_of_range("label " + std::to_string(label) + " outside the class range");
  }
  if (prediction < 0 || static_cast<std::size_t>(prediction) >= n_) {
    throw std::out_of_range("prediction " + std::to_string(prediction) +
                            " outside the class range");
  }
  ++counts_[static_cast<std::size_t>(label) * n_ + static_cast<std::size_t>(prediction)];
  ++total_;
}

void ConfusionMatrix::add(std::span<const int> labels, std::span<const int> predictions) {
  if (labels.size() != predictions.size()) throw std::invalid_argument("length mismatch");
  for (std::size_t i = 0; i < labels.size(); ++i) add(labels[i], predictions[i]);
}

void ConfusionMatrix::add(std::span<const std::uint8_t> labels,
                          std::span<const std::uint8_t> predictions) {
  if (labels.size() != predictions.size()) throw std::invalid_argument("length mismatch");
  for (std::size_t i = 0; i < labels.size(); ++i) add(labels[i], predictions[i]);
}

SegScores seg_scores(const ConfusionMatrix& cm) {
  const std::size_t n = cm.classes();
  SegScores s;
  s.iou.assign(n, std::numeric_limits<double>::quiet_NaN());
  std::uint64_t diag = 0;
  double acc_sum = 0.0, iou_sum = 0.0;
  std::size_t acc_n = 0, iou_n = 0;
  for (std::size_t c = 0; c < n; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t k = 0; k < n; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    const std::uint64_t tp = cm.at(c, c);
    diag += tp;
    if (row > 0) {
      acc_sum += static_cast<double>(tp) / static_cast<double>(row);
      ++acc_n;
    }
    const std::uint64_t uni = row + col - tp;
    if (uni > 0) {
      s.iou[c] = static_cast<double>(tp) / static_cast<double>(uni);
      iou_sum += s.iou[c];
      ++iou_n;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  s.pixel_acc = cm.total() ? 100.0 * static_cast<double>(diag) / static_cast<double>(cm.total()) : nan;
  s.mean_acc = acc_n ? 100.0 * acc_sum / static_cast<double>(acc_n) : nan;
  s.mean_iou = iou_n ? 100.0 * iou_sum / static_cast<double>(iou_n) : nan;
  return s;
}

double accuracy(std::span<const int> labels, std::span<const int> predictions) {
  if (labels.size() != predictions.size()) throw std::invalid_argument("length mismatch");
  if (labels.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += labels[i] == predictions[i];
  return 100.0 * static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace rna::harness
