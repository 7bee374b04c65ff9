// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "rna/arch/spec.hpp"
#include "rna/ops.hpp"
#include "rna/rng.hpp"
#include "rna/weights_io.hpp"

namespace rna::arch {

/// One convolution stage. With `preact` set the stage computes
/// conv(relu(bn(x))), always in that order.
struct ConvStage {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  bool preact = true;
  bool bias = false;

  std::size_t padding() const { return same_padding(kernel, dilation); }
  Conv2dParams conv_params() const { return {stride, padding(), dilation}; }
};

enum class ShortcutKind { kIdentity, kProjection, kPadIdentity };

struct StemLayer {
  std::string name;
  ConvStage conv;
};

struct PoolLayer {
  std::string name;
  std::size_t level = 0;
  PoolParams pool;
};

/// y = f(x) + shortcut(x), with f the ordered stage list.
struct UnitLayer {
  std::string name;
  std::size_t level = 0;
  UnitKind kind = UnitKind::kTwoStage;
  std::vector<ConvStage> stages;
  ShortcutKind shortcut = ShortcutKind::kIdentity;
  std::size_t shortcut_stride = 1;
  /// Applied right before the last stage's convolution.
  double dropout = 0.0;

  std::size_t in() const { return stages.front().in; }
  std::size_t out() const { return stages.back().out; }
};

/// Final normalize + rectify ahead of pooling (pre-activation networks end
/// on an un-normalized sum).
struct PostActLayer {
  std::string name;
  std::size_t channels = 0;
};

struct ClassifierLayer {
  std::string name;
  std::size_t in = 0;
  std::size_t classes = 0;
};

enum class SegHeadKind { kOneConv, kTwoConv };

/// Dense classifier on the final feature map: one dilated 3x3 layer, or a
/// dilated 3x3 hidden stage (no normalization) + rectifier + dilated 3x3.
struct SegHeadLayer {
  std::string name;
  SegHeadKind kind = SegHeadKind::kOneConv;
  std::size_t in = 0;
  std::size_t hidden = 512;
  std::size_t classes = 21;
  std::size_t dilation = 12;

  std::vector<ConvStage> stages() const;
};

using Layer = std::variant<StemLayer, PoolLayer, UnitLayer, PostActLayer,
                           ClassifierLayer, SegHeadLayer>;

const std::string& layer_name(const Layer& layer);

struct ParamShape {
  std::string name;
  Shape shape;
};

/// Trainable tensors a layer owns, in declaration order.
std::vector<ParamShape> param_shapes(const Layer& layer);
/// Normalization layers a layer owns (prefix of their gamma/beta names).
std::vector<std::pair<std::string, std::size_t>> bn_slots(const Layer& layer);

/// Layer sequence the spec describes, without allocating parameters.
std::vector<Layer> layout(const NetworkSpec& spec);

struct RunOptions {
  BnMode bn = BnMode::kEval;
  bool training = false;  // enables dropout
  Rng* rng = nullptr;     // required when dropout is active
};

struct InitOptions {
  std::uint64_t seed = 0;
  /// Weight variance is `scale / fan_in`.
  double scale = 1.0;
};

class Network {
 public:
  Network() = default;
  Network(std::vector<Layer> layers, const InitOptions& init);

  Network clone() const;

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& mutable_layers() { return layers_; }
  std::size_t size() const { return layers_.size(); }

  const std::optional<NetworkSpec>& spec() const { return spec_; }
  void set_spec(NetworkSpec spec) { spec_ = std::move(spec); }

  Tensor forward(const Tensor& x, const RunOptions& opts);
  /// Runs layers [begin, end).
  Tensor forward_range(const Tensor& x, std::size_t begin, std::size_t end,
                       const RunOptions& opts);
  Tensor forward_layer(std::size_t index, const Tensor& x,
                       const RunOptions& opts);

  /// Residual mapping f of unit `index`.
  Tensor unit_branch(std::size_t index, const Tensor& x, const RunOptions& opts);
  /// Shortcut mapping of unit `index` (identity returns x itself).
  Tensor unit_shortcut(std::size_t index, const Tensor& x,
                       const RunOptions& opts);

  const Tensor& param(const std::string& name) const;
  Tensor& param(const std::string& name);
  const std::map<std::string, Tensor>& params() const { return params_; }
  std::vector<Tensor> parameters() const;
  /// Parameters of one layer, declaration order.
  std::vector<Tensor> layer_parameters(std::size_t index) const;
  std::size_t param_count() const;
  void zero_grad();

  BnState& bn_state(const std::string& prefix);
  const std::map<std::string, BnState>& bn_states() const { return bn_; }
  void init_running_stats_identity();

  /// Adds parameters and normalization slots for `layer` (appended at the
  /// end or inserted at `position`).
  void insert_layer(std::size_t position, Layer layer, const InitOptions& init);
  void erase_layer(std::size_t position);

  /// Parameters plus initialized running statistics
  /// ("<prefix>.running_mean" / "<prefix>.running_var").
  TensorMap state_dict() const;
  /// Copies every matching entry; with `strict`, missing or unexpected names
  /// and shape mismatches throw.
  void load_state_dict(const TensorMap& state, bool strict = true);

 private:
  void allocate(const Layer& layer, Rng& rng, double scale);
  Tensor run_stage(const std::string& prefix, const ConvStage& st,
                   const Tensor& x, const RunOptions& opts, double dropout);

  std::vector<Layer> layers_;
  std::map<std::string, Tensor> params_;
  std::map<std::string, BnState> bn_;
  std::optional<NetworkSpec> spec_;
};

/// Validates `spec` and allocates its network.
Network build(const NetworkSpec& spec, const InitOptions& init = {});

/// Validation only; throws BuildError.
void validate(const NetworkSpec& spec);

}  // namespace rna::arch
