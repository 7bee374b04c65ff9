// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>

#include "rna/arch/spec.hpp"

namespace rna::harness {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training diverged (non-finite loss or gradients).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Task { kClassify, kSegment };

struct TrainConfig {
  std::string spec = "32-1-1-1-0-0-0-0";
  std::string widths;  // "a,b,c,d,e,f,g" overrides the level widths
  std::string shortcut = "projection";  // or "pad"
  Task task = Task::kClassify;

  double lr_start = 0.1;
  double lr_end = 1e-6;
  std::size_t total_iters = 1000;
  std::size_t batch = 16;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  std::string precision = "f64";
  double init_scale = 1.0;

  /// "blobs", "segblobs" or "cifar10:<file>".
  std::string dataset = "blobs";
  std::size_t classes = 2;
  std::size_t image_size = 32;
  std::size_t train_examples = 512;
  std::size_t eval_examples = 256;
  double noise = 0.5;
  /// Single evaluation crop; 0 picks round(image_size * 10 / 7).
  std::size_t eval_crop = 0;

  std::string out_dir = "run";
  std::size_t log_every = 10;
  /// Stop once accuracy on the training set reaches this value (0 = never),
  /// checked every `check_every` iterations.
  double stop_train_acc = 0.0;
  std::size_t check_every = 50;

  // Segmentation fine-tuning.
  std::string head = "2conv";  // or "1conv"
  std::size_t seg_hidden = 512;
  std::size_t crop = 500;
  bool augment = true;
  std::string init_weights;  // classification weights to start from

  std::size_t resolved_eval_crop() const;
};

/// Parses "key = value" lines; '#' starts a comment. Unknown keys, bad
/// values and violated invariants raise ConfigError.
TrainConfig parse_config(std::string_view text);
TrainConfig load_config(const std::string& path);

/// Sets one key on an existing config (same rules as the file format).
void set_option(TrainConfig& cfg, const std::string& key, const std::string& value);

/// Checks lr_start >= lr_end > 0, total_iters >= 1 and friends.
void validate(const TrainConfig& cfg);

/// Canonical text form; parse_config(to_text(c)) reproduces c.
std::string to_text(const TrainConfig& cfg);

/// lr_start + (lr_end - lr_start) * iter / (total_iters - 1). A single
/// iteration run uses lr_start.
double lr_at(const TrainConfig& cfg, std::size_t iter);

/// Network description the config trains.
arch::NetworkSpec network_spec(const TrainConfig& cfg);

const char* to_string(Task t);

}  // namespace rna::harness
