// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rna/arch/network.hpp"

namespace rna::unravel {

class UnsupportedChain : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ChainSpec {
  std::size_t units = 2;
  std::size_t channels = 8;
  arch::UnitKind kind = arch::UnitKind::kTwoStage;
  /// With classes > 0 a post-activation and a linear classifier follow the
  /// units.
  std::size_t classes = 0;
};

/// Residual chain of identity-shortcut units (named "c.u1", "c.u2", ...)
/// with running statistics set to the identity.
arch::Network make_chain(const ChainSpec& spec, const arch::InitOptions& init);

/// Layer indices of the residual units. Throws UnsupportedChain unless every
/// unit keeps its shape and uses an identity shortcut.
std::vector<std::size_t> chain_units(const arch::Network& net);

/// Forward options used for analysis: frozen normalization, no dropout.
arch::RunOptions analysis_options();

struct SubNetworkTerm {
  std::size_t index = 0;
  Tensor value;
  std::size_t actual_depth = 0;  // min(index, l)
};

/// Unravelled terms of a network made only of residual units: term 0 is x,
/// term i is f_i applied to the output of units 1..i-1.
std::vector<SubNetworkTerm> expand(arch::Network& net, const Tensor& x,
                                   std::optional<std::size_t> effective_depth = {});

/// Sum of the term values.
Tensor sum_terms(const std::vector<SubNetworkTerm>& terms);

double l2_norm(std::span<const double> v);
double l2_distance(const Tensor& a, const Tensor& b);

using Mapping = std::function<Tensor(const Tensor&)>;

/// ||f(a + b) - f(a) - f(b)||.
double nonlinearity_gap(const Mapping& f, const Tensor& a, const Tensor& b);

/// The residual mapping of one unit as a standalone function.
Mapping unit_mapping(arch::Network& net, std::size_t layer_index);

enum class RouteMode { kBoth, kBranchOnly, kShortcutOnly };

/// Which backward routes are allowed. `modes` is indexed by unit ordinal
/// (empty means kBoth everywhere). With an effective depth l, a unit's branch
/// passes a gradient component only if fewer than l branches were traversed
/// above it.
struct RoutePolicy {
  std::vector<RouteMode> modes;
  std::optional<std::size_t> effective_depth;
};

struct RouteGrads {
  Tensor input_grad;
  std::map<std::string, Tensor> param_grads;
};

/// Forward pass recorded layer by layer so that the backward pass can be
/// replayed under different route policies.
class RoutedGraph {
 public:
  RoutedGraph(arch::Network& net, const Tensor& x,
              const arch::RunOptions& opts = analysis_options());

  const Tensor& output() const { return output_; }
  std::size_t unit_count() const { return units_; }

  /// Gradients of <output, seed> with respect to the input and every
  /// parameter, restricted to the routes `policy` allows.
  RouteGrads backward(const Tensor& seed, const RoutePolicy& policy = {});

 private:
  struct Record {
    Tensor leaf;
    Tensor out;       // non-unit layers
    Tensor branch;    // units
    Tensor shortcut;  // units; undefined for identity shortcuts
    bool unit = false;
    std::size_t ordinal = 0;
  };

  arch::Network* net_;
  std::vector<Record> records_;
  Tensor output_;
  std::size_t units_ = 0;
};

/// Plain autodiff gradients (one graph through the whole network).
RouteGrads full_gradients(arch::Network& net, const Tensor& x, const Tensor& seed,
                          const arch::RunOptions& opts = analysis_options());

/// Parameter gradients of a unit's branch (its "w"), keyed by name.
std::map<std::string, Tensor> unit_param_grads(const arch::Network& net,
                                               std::size_t layer_index,
                                               const RouteGrads& grads);

struct GradDecomposition {
  std::map<std::string, Tensor> term_direct;  // through unit 2's shortcut
  std::map<std::string, Tensor> term_via_f2;  // through unit 2's branch
  std::map<std::string, Tensor> full;         // plain autodiff
};

/// Splits the gradient of unit 1's parameters in a two-unit chain by the
/// route taken through unit 2. `upstream` is the gradient at the chain
/// output.
GradDecomposition grad_decomposition(arch::Network& two_unit_net, const Tensor& x,
                                     const Tensor& upstream);

/// Training-time view in which backward routes crossing more than l residual
/// branches are dropped. The forward pass is unchanged.
class EffectiveDepthView {
 public:
  EffectiveDepthView(arch::Network& net, std::size_t l);

  std::size_t l() const { return l_; }
  Tensor forward(const Tensor& x, const arch::RunOptions& opts);
  RouteGrads gradients(const Tensor& x, const Tensor& seed,
                       const arch::RunOptions& opts = analysis_options());

 private:
  arch::Network* net_;
  std::size_t l_;
};

EffectiveDepthView truncate_effective_depth(arch::Network& net, std::size_t l);

struct Route {
  std::vector<RouteMode> modes;  // one per unit, branch or shortcut only
  std::size_t branch_count = 0;
  RouteGrads grads;
};

/// Every route from the output to the parameters of unit `target` (ordinal):
/// the target's branch, and branch or shortcut for each unit above it.
/// Units below the target keep both routes.
std::vector<Route> enumerate_routes(arch::Network& net, const Tensor& x,
                                    const Tensor& seed, std::size_t target);

/// Element-wise sum of gradient maps.
std::map<std::string, Tensor> add_grads(const std::map<std::string, Tensor>& a,
                                        const std::map<std::string, Tensor>& b);

/// ||a - b|| / ||b|| with both maps flattened into one vector.
double rel_diff(const std::map<std::string, Tensor>& a,
                    const std::map<std::string, Tensor>& b);

}  // namespace rna::unravel
