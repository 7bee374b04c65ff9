// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rna/arch/network.hpp"
#include "rna/harness/config.hpp"
#include "rna/harness/data.hpp"
#include "rna/harness/metrics.hpp"

namespace rna::harness {

/// One logged iteration. Classification fills `accuracy`; segmentation fills
/// the three pixel scores. Scores are percentages on the iteration's batch.
struct MetricRecord {
  std::size_t iter = 0;
  double lr = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;
  double pixel_acc = 0.0;
  double mean_acc = 0.0;
  double mean_iou = 0.0;
};

std::string metrics_csv_header(Task task);
std::string metrics_csv_row(Task task, const MetricRecord& r);
std::string metrics_csv(Task task, const std::vector<MetricRecord>& records);

/// SGD with momentum and L2 weight decay on every parameter:
/// v = momentum * v + (g + weight_decay * w), w -= lr * v.
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  /// Updates every parameter that received a gradient; throws NumericError
  /// on non-finite gradients.
  void step(arch::Network& net, double lr);

 private:
  double momentum_;
  double weight_decay_;
  std::map<std::string, std::vector<double>> velocity_;
};

/// Independent seed streams derived from the config seed.
enum class Stream : std::uint64_t { kInit = 0, kTrainData, kEvalData, kSampler, kDropout, kAugment };
std::uint64_t stream_seed(const TrainConfig& cfg, Stream s);

/// Classification net from the config, or the dense prediction net built on
/// it for segmentation (with `init_weights` loaded when given).
arch::Network make_network(const TrainConfig& cfg);

ClassifyData classify_data(const TrainConfig& cfg, bool eval);
SegmentData segment_data(const TrainConfig& cfg, bool eval);

struct TrainResult {
  arch::Network net;
  std::vector<MetricRecord> records;
  std::size_t iterations = 0;  // iterations actually run
  bool early_stopped = false;
  /// Last full training-set score (accuracy or pixel accuracy); NaN if never checked.
  double train_score = 0.0;
};

/// Runs the config. With `out` non-empty, writes metrics.csv (every
/// `log_every` iterations and the last one), config.txt and weights.rnwt
/// there. Segmentation keeps normalization statistics frozen. Throws
/// NumericError (naming iteration and lr) on a non-finite loss.
TrainResult train(const TrainConfig& cfg, const std::filesystem::path& out);

/// Training-set accuracy in percent (normalization in eval mode).
double classify_accuracy(arch::Network& net, const ClassifyData& data, std::size_t chunk = 64);

/// Pixel scores of a dense prediction net on full images, each padded or cut
/// to a single `crop` x `crop` window anchored at the top-left.
SegScores segment_scores(arch::Network& net, const SegmentData& data, std::size_t crop);

/// Loads weights trained under `cfg` and scores the evaluation split with a
/// single crop of size `cfg.resolved_eval_crop()`. Classification inputs
/// are resized to the crop. Throws ConfigError on a class-count mismatch.
MetricRecord evaluate(const TrainConfig& cfg, const std::filesystem::path& weights);

struct Report {
  std::string markdown;
  std::vector<std::string> warnings;
  std::vector<std::filesystem::path> written;
};

/// Reads config.txt and metrics.csv from each run directory, writes
/// report.md and loss.svg into `out` (plus profile.svg when a run holds a
/// profile.csv). Runs with malformed CSV are skipped with a warning.
Report report(const std::vector<std::filesystem::path>& runs, const std::filesystem::path& out);

}  // namespace rna::harness
