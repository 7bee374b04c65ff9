// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rna::arch {

inline constexpr std::size_t kLevels = 7;

enum class Downsample { kNone, kPool, kStride };

enum class UnitKind {
  kTwoStage,    // two 3x3 pre-activation stages (B1-B5)
  kBottleneck,  // 1x1, 3x3, 1x1 pre-activation stages (B6, B7)
  kLinear,      // single 3x3 convolution, no normalization or rectifier
};

enum class ShortcutPolicy {
  kProjection,   // 1x1 convolution whenever width or stride changes
  kPadIdentity,  // subsample + zero-pad channels, no parameters
};

const char* to_string(Downsample d);
const char* to_string(UnitKind k);

class ParseError : public std::invalid_argument {
 public:
  ParseError(const std::string& msg, int field)
      : std::invalid_argument(msg), field_(field) {}
  /// Zero-based index of the offending dash-separated field, -1 for the
  /// field count itself.
  int field() const { return field_; }

 private:
  int field_;
};

class BuildError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A network of the "input-n1-n2-n3-n4-n5-n6-n7" family. Levels B1-B5 hold
/// two-stage units, B6 and B7 bottleneck units.
struct NetworkSpec {
  std::size_t input_size = 224;
  std::array<std::size_t, kLevels> units{};
  /// Output channels per level. Bottleneck levels use (w/4, w/2, w) for their
  /// three stages.
  std::array<std::size_t, kLevels> level_widths{64, 128, 256, 512, 1024, 2048,
                                                4096};
  /// Downsampling applied on entry to each level.
  std::array<Downsample, kLevels> downsample{};
  std::size_t num_classes = 1000;
  ShortcutPolicy shortcut = ShortcutPolicy::kProjection;

  std::size_t stem_width() const { return level_widths[0]; }
  std::size_t unit_count() const;
  /// Trainable layers: 2 per two-stage unit, 3 per bottleneck, plus the stem
  /// convolution and the classifier.
  std::size_t depth() const;
  std::size_t downsample_count() const;
  /// The naming string.
  std::string name() const;
};

UnitKind level_kind(std::size_t level);

/// Default placement by input family: 224 inputs downsample before B2-B6,
/// 112 before B2-B5, 56 before B3-B5 (all by pooling). Other sizes use the
/// nearest family (>= 160 -> 224, >= 84 -> 112, else 56).
std::array<Downsample, kLevels> default_downsampling(std::size_t input_size);

/// Parses the dash grammar: eight decimal fields without sign or leading
/// zeros, the first positive.
NetworkSpec parse_spec(std::string_view name);

/// Parses comma-separated level widths ("64,128,...", exactly seven).
std::array<std::size_t, kLevels> parse_widths(std::string_view text);

}  // namespace rna::arch
