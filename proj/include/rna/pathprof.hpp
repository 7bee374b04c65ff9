// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rna/unravel.hpp"

namespace rna::pathprof {

struct PathSample {
  std::size_t k = 0;
  std::size_t trial = 0;
  double grad_norm = 0.0;  // ||input gradient|| / batch size
  bool finite = true;
  std::vector<std::size_t> units;  // unit ordinals routed through their branch
};

struct KSummary {
  std::size_t k = 0;
  std::size_t trials = 0;    // samples drawn
  std::size_t excluded = 0;  // non-finite samples left out of the statistics
  double mean = 0.0;
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct ProfileReport {
  std::string network;
  std::size_t units = 0;
  std::vector<KSummary> per_k;
  std::vector<PathSample> samples;
  std::vector<std::string> warnings;
};

/// Saturates at UINT64_MAX.
std::uint64_t binomial(std::size_t n, std::size_t k);

/// All k-subsets of {0..n-1} in lexicographic order.
std::vector<std::vector<std::size_t>> combinations(std::size_t n, std::size_t k);

/// Uniform k-subset of {0..n-1}, sorted.
std::vector<std::size_t> random_subset(std::size_t n, std::size_t k, Rng& rng);

/// Seed for the loss "sum of the true-class logits": one-hot rows for an
/// [N, C] output.
Tensor true_class_seed(const Shape& logits_shape, std::span<const int> labels);

/// Replays backward passes over one recorded forward pass.
class PathProfiler {
 public:
  /// `seed` is the gradient of the loss at the network output.
  PathProfiler(arch::Network& net, const Tensor& batch, const Tensor& seed);
  /// Loss = sum of the true-class logits.
  PathProfiler(arch::Network& net, const Tensor& batch, std::span<const int> labels);

  std::size_t units() const { return graph_.unit_count(); }
  std::size_t batch() const { return batch_; }

  /// Gradient through the branches of `units` and the shortcuts of all
  /// others.
  PathSample run(std::span<const std::size_t> units, std::size_t trial = 0);

 private:
  unravel::RoutedGraph graph_;
  Tensor seed_;
  std::size_t batch_;
};

/// One sampled path of length k. Throws std::invalid_argument when k exceeds
/// the unit count.
PathSample sample_path_gradient(arch::Network& net, const Tensor& batch,
                                std::span<const int> labels, std::size_t k,
                                std::uint64_t seed);

/// Routes are drawn without replacement when C(n, k) <= kExactLimit (trials
/// then capped at C(n, k)), uniformly with replacement otherwise.
inline constexpr std::uint64_t kExactLimit = 10000;

ProfileReport profile(arch::Network& net, const Tensor& batch,
                      std::span<const int> labels, std::span<const std::size_t> ks,
                      std::size_t trials_per_k, std::uint64_t seed,
                      const std::string& network_name = "");
ProfileReport profile(PathProfiler& profiler, std::span<const std::size_t> ks,
                      std::size_t trials_per_k, std::uint64_t seed,
                      const std::string& network_name = "");

/// Summary statistics; the mean sums values in ascending order.
KSummary summarize(std::size_t k, std::span<const PathSample> samples);

double median(std::vector<double> v);

/// Rank correlation with average ranks for ties; NaN when either side is
/// constant.
double spearman(std::span<const double> x, std::span<const double> y);

/// Spearman correlation between k and the per-k median.
double median_trend(const ProfileReport& report);

/// "k,trial,grad_norm" rows.
std::string samples_csv(const ProfileReport& report);
/// "k,trials,excluded,mean,median,min,max" rows.
std::string summary_csv(const ProfileReport& report);
/// Median gradient norm against k on a log axis.
std::string median_svg(const ProfileReport& report);

}  // namespace rna::pathprof
