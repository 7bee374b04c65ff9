// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rna/arch/network.hpp"

namespace rna::arch {

struct MapShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  bool operator==(const MapShape&) const = default;
};

/// Output shape after every layer for an input of `channels` x h x w.
/// Classifier layers report classes x 1 x 1.
std::vector<MapShape> trace_shapes(const std::vector<Layer>& layers,
                                   std::size_t height, std::size_t width,
                                   std::size_t channels = 3);

struct NetworkStats {
  std::size_t depth = 0;
  std::size_t unit_count = 0;
  std::size_t param_count = 0;
  std::size_t downsample_ops = 0;
  /// Spatial extent of each level's feature map (empty for levels the
  /// network never reaches, i.e. trailing empty levels).
  std::array<std::optional<std::size_t>, kLevels> level_map{};
  MapShape final_map;  // last feature map before global pooling
  std::size_t feature_dim = 0;
};

/// Structural statistics from the layout alone (no parameter allocation).
NetworkStats stats(const NetworkSpec& spec);

/// Convolution/linear layers carrying trainable weights on the main path
/// (projection shortcuts excluded).
std::size_t count_trainable_layers(const std::vector<Layer>& layers);

std::size_t count_params(const std::vector<Layer>& layers);

struct RfStep {
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t dilation = 1;
};

/// Spatial operations from the input up to and including layer `last`,
/// following residual branches (never shortcuts).
std::vector<RfStep> main_path(const std::vector<Layer>& layers, std::size_t last);

/// Standard recurrence rf += (K-1)*dilation*jump, jump *= stride. The walk
/// starts on a grid whose cells span `base_jump` input pixels (rf = jump =
/// base_jump), so base_jump = 1 is the raw input.
std::size_t receptive_field(std::span<const RfStep> steps,
                            std::size_t base_jump = 1);

/// Receptive field of layer `last` in input pixels.
std::size_t receptive_field(const Network& net, std::size_t last);

/// Cumulative stride of the main path up to and including `last`.
std::size_t output_stride(const std::vector<Layer>& layers, std::size_t last);

/// CSV header and row for the structural report.
std::string stats_csv_header();
std::string stats_csv_row(const std::string& config, const NetworkStats& s);
std::string stats_text(const NetworkSpec& spec, const NetworkStats& s);

}  // namespace rna::arch
