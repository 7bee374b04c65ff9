// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rna/arch/network.hpp"
#include "rna/arch/stats.hpp"

namespace rna::seg {

class RewriteError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Replaces the top-most `top_k` pooling downsamples by stride 2 on the first
/// convolution (and shortcut) of the level that follows. Identity shortcuts
/// of affected units become strided shortcuts under the spec's policy; new
/// projections start as the identity kernel. Map sizes are unchanged.
arch::Network pool_to_stride(const arch::Network& net, std::size_t top_k);

struct DilationStep {
  std::size_t layer = 0;  // layer index
  std::string name;       // layer name
  std::string part;       // "pool", "stem", "s<j>" for a unit stage, "shortcut"
  std::size_t stride_before = 1;
  std::size_t stride_after = 1;
  std::size_t dilation_before = 1;
  std::size_t dilation_after = 1;
};

struct DilationPlan {
  std::size_t target_stride = 0;
  std::vector<DilationStep> steps;  // every pool and convolution stage touched
};

/// Output stride of the rewritten network for a spec: 8 for the 224 family,
/// unchanged otherwise.
std::size_t default_target_stride(const arch::NetworkSpec& spec);

/// Removes the top-most factor-2 downsamples until the main path stride equals
/// `target_stride`; every later operation's dilation doubles per removal.
DilationPlan plan_dilation(const arch::Network& net, std::size_t target_stride);
DilationPlan plan_dilation(const arch::Network& net);

/// Applies the plan in place. Throws RewriteError when a step's layer or
/// before-values do not match the graph.
void apply_plan(arch::Network& net, const DilationPlan& plan);

struct SegHead {
  arch::SegHeadKind kind = arch::SegHeadKind::kOneConv;
  std::size_t hidden = 512;
  std::size_t classes = 21;
  std::size_t dilation = 12;
};

/// Receptive field of the head in input pixels when it sits on a map of the
/// given output stride.
std::size_t head_receptive_field(const SegHead& head, std::size_t output_stride);

struct DropoutPolicy {
  std::map<std::size_t, double> rate_by_width{{2048, 0.3}, {4096, 0.5}};

  /// Keys taken from the B6 and B7 widths of `spec`.
  static DropoutPolicy for_spec(const arch::NetworkSpec& spec);
  double rate_for(std::size_t width) const;
};

/// Classification network -> dense prediction network: drops the classifier
/// and global pooling, applies the plan, sets unit dropout from the policy
/// and appends the head (initialized from `init`).
arch::Network to_fcn(const arch::Network& net, const DilationPlan& plan,
                     const SegHead& head, const DropoutPolicy& dropout,
                     const arch::InitOptions& init = {});

/// Index of the last layer before the head (the final feature map).
std::size_t feature_layer(const arch::Network& net);

// Raster data.

struct Image {
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;  // CHW

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data[(c * height + y) * width + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * height + y) * width + x];
  }
};

struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;

  std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
};

inline constexpr std::uint8_t kIgnore = 255;

/// Bilinear with half-pixel centres and edge clamping.
Image resize_bilinear(const Image& img, std::size_t height, std::size_t width);
/// Nearest neighbour with half-pixel centres.
LabelMap resize_nearest(const LabelMap& lab, std::size_t height, std::size_t width);

struct AugmentConfig {
  double min_ratio = 0.7;
  double max_ratio = 1.3;
  std::size_t crop = 500;
  double image_fill = 0.0;
};

struct AugmentParams {
  double ratio = 1.0;
  std::size_t offset_y = 0;
  std::size_t offset_x = 0;
};

/// Resizes both rasters by `p.ratio` (sizes rounded), then cuts a crop x crop
/// window at the given offset; regions outside the resized raster get
/// `image_fill` and the ignore label.
std::pair<Image, LabelMap> augment_with(const Image& img, const LabelMap& lab,
                                        const AugmentParams& p, const AugmentConfig& cfg = {});

/// Ratio uniform in [min_ratio, max_ratio], offset uniform over valid
/// positions (0 when the resized raster is smaller than the crop).
std::pair<Image, LabelMap> augment_sample(const Image& img, const LabelMap& lab, Rng& rng,
                                          const AugmentConfig& cfg = {},
                                          AugmentParams* used = nullptr);

/// [N, C, H, W] -> [N, C, height, width], same convention as resize_bilinear.
Tensor upsample_bilinear(const Tensor& scores, std::size_t height, std::size_t width);

/// Nearest-neighbour labels at score-map resolution, flattened N*h*w.
std::vector<int> align_labels(const std::vector<LabelMap>& labels, std::size_t height,
                              std::size_t width);

Tensor images_to_batch(const std::vector<Image>& images);

/// Per-pixel argmax over channels of [N, C, H, W] scores.
std::vector<LabelMap> predict_labels(const Tensor& scores);

}  // namespace rna::seg
