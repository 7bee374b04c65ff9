// SPDX-License-Identifier: Apache-2.0
#include "rna/unravel.hpp"

#include <bit>
#include <cmath>

namespace rna::unravel {

using arch::ConvStage;
using arch::Network;
using arch::UnitKind;
using arch::UnitLayer;

namespace {

std::vector<ConvStage> chain_stages(UnitKind kind, std::size_t w) {
  switch (kind) {
    case UnitKind::kTwoStage:
      return {ConvStage{w, w, 3}, ConvStage{w, w, 3}};
    case UnitKind::kBottleneck:
      if (w % 4 != 0) throw arch::BuildError("bottleneck chain width must be a multiple of 4");
      return {ConvStage{w, w / 4, 1}, ConvStage{w / 4, w / 2, 3},
              ConvStage{w / 2, w, 1}};
    case UnitKind::kLinear:
      return {ConvStage{w, w, 3, 1, 1, false, false}};
  }
  return {};
}

// Gradient of <out, g> with respect to `leaf`; parameter gradients
// accumulate as a side effect.
Tensor vjp(const Tensor& out, Tensor& leaf, const Tensor& g) {
  leaf.zero_grad();
  out.backward(g);
  if (!leaf.has_grad()) return Tensor::zeros(leaf.shape());
  auto grad = leaf.grad();
  return Tensor::from(leaf.shape(), std::vector<double>(grad.begin(), grad.end()));
}

void accumulate(std::optional<Tensor>& slot, const Tensor& g) {
  if (!slot) {
    slot = g;
  } else {
    NoGradGuard ng;
    slot = add(*slot, g);
  }
}

std::map<std::string, Tensor> collect_param_grads(const Network& net) {
  std::map<std::string, Tensor> out;
  for (const auto& [name, t] : net.params()) {
    if (t.has_grad()) {
      auto g = t.grad();
      out[name] = Tensor::from(t.shape(), std::vector<double>(g.begin(), g.end()));
    } else {
      out[name] = Tensor::zeros(t.shape());
    }
  }
  return out;
}

}  // namespace

Network make_chain(const ChainSpec& spec, const arch::InitOptions& init) {
  if (spec.units == 0) throw arch::BuildError("chain needs at least one unit");
  if (spec.channels == 0) throw arch::BuildError("chain width must be positive");
  std::vector<arch::Layer> layers;
  for (std::size_t i = 0; i < spec.units; ++i) {
    UnitLayer u;
    u.name = "c.u" + std::to_string(i + 1);
    u.kind = spec.kind;
    u.stages = chain_stages(spec.kind, spec.channels);
    layers.emplace_back(std::move(u));
  }
  if (spec.classes > 0) {
    layers.emplace_back(arch::PostActLayer{"post", spec.channels});
    layers.emplace_back(arch::ClassifierLayer{"head", spec.channels, spec.classes});
  }
  Network net(std::move(layers), init);
  net.init_running_stats_identity();
  return net;
}

std::vector<std::size_t> chain_units(const Network& net) {
  std::vector<std::size_t> units;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto& layer = net.layers()[i];
    const auto* u = std::get_if<UnitLayer>(&layer);
    if (!u) {
      if (std::holds_alternative<arch::PoolLayer>(layer)) {
        throw UnsupportedChain("chain contains downsampling layer " + arch::layer_name(layer));
      }
      continue;
    }
    if (u->shortcut != arch::ShortcutKind::kIdentity) {
      throw UnsupportedChain("unit " + u->name + " has a non-identity shortcut");
    }
    for (const auto& st : u->stages) {
      if (st.stride != 1) throw UnsupportedChain("unit " + u->name + " downsamples");
    }
    if (u->in() != u->out()) throw UnsupportedChain("unit " + u->name + " changes width");
    units.push_back(i);
  }
  for (std::size_t k = 0; k < units.size(); ++k) {
    if (units[k] != units[0] + k) {
      throw UnsupportedChain("residual units are not contiguous");
    }
  }
  return units;
}

arch::RunOptions analysis_options() {
  arch::RunOptions o;
  o.bn = BnMode::kFrozen;
  o.training = false;
  return o;
}

std::vector<SubNetworkTerm> expand(Network& net, const Tensor& x,
                                   std::optional<std::size_t> effective_depth) {
  const auto units = chain_units(net);
  if (units.size() != net.size()) {
    throw UnsupportedChain("expansion needs a network made only of residual units");
  }
  const std::size_t d = units.size();
  const std::size_t l = effective_depth.value_or(d);
  NoGradGuard ng;
  const auto opts = analysis_options();
  std::vector<SubNetworkTerm> terms;
  terms.push_back({0, x, 0});
  Tensor y = x;
  for (std::size_t i = 0; i < d; ++i) {
    Tensor f = net.unit_branch(units[i], y, opts);
    terms.push_back({i + 1, f, std::min(i + 1, l)});
    y = add(f, net.unit_shortcut(units[i], y, opts));
  }
  return terms;
}

Tensor sum_terms(const std::vector<SubNetworkTerm>& terms) {
  if (terms.empty()) throw std::invalid_argument("no terms to sum");
  NoGradGuard ng;
  Tensor s = terms.front().value;
  for (std::size_t i = 1; i < terms.size(); ++i) s = add(s, terms[i].value);
  return s;
}

double l2_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double e : v) acc += e * e;
  return std::sqrt(acc);
}

double l2_distance(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("l2_distance: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a.at(i) - b.at(i);
    acc += d * d;
  }
  return std::sqrt(acc);
}

double nonlinearity_gap(const Mapping& f, const Tensor& a, const Tensor& b) {
  NoGradGuard ng;
  const Tensor fab = f(add(a, b));
  return l2_distance(fab, add(f(a), f(b)));
}

Mapping unit_mapping(Network& net, std::size_t layer_index) {
  if (!std::holds_alternative<UnitLayer>(net.layers().at(layer_index))) {
    throw std::invalid_argument("layer is not a residual unit");
  }
  return [&net, layer_index](const Tensor& x) {
    return net.unit_branch(layer_index, x, analysis_options());
  };
}

RoutedGraph::RoutedGraph(Network& net, const Tensor& x, const arch::RunOptions& opts)
    : net_(&net) {
  Tensor h = x;
  for (std::size_t i = 0; i < net.size(); ++i) {
    Record r;
    r.leaf = h.detach(true);
    if (std::holds_alternative<UnitLayer>(net.layers()[i])) {
      const auto& u = std::get<UnitLayer>(net.layers()[i]);
      r.unit = true;
      r.ordinal = units_++;
      r.branch = net.unit_branch(i, r.leaf, opts);
      if (u.shortcut != arch::ShortcutKind::kIdentity) {
        r.shortcut = net.unit_shortcut(i, r.leaf, opts);
      }
      NoGradGuard ng;
      h = add(r.branch, r.shortcut.defined() ? r.shortcut : r.leaf);
    } else {
      r.out = net.forward_layer(i, r.leaf, opts);
      h = r.out;
    }
    records_.push_back(std::move(r));
  }
  output_ = h.detach();
}

RouteGrads RoutedGraph::backward(const Tensor& seed, const RoutePolicy& policy) {
  if (seed.shape() != output_.shape()) {
    throw ShapeError("route seed does not match the network output");
  }
  if (!policy.modes.empty() && policy.modes.size() != units_) {
    throw std::invalid_argument("route policy needs one mode per unit");
  }
  if (policy.effective_depth && *policy.effective_depth == 0) {
    throw std::invalid_argument("effective depth must be at least 1");
  }
  const bool stratify = policy.effective_depth.has_value();
  const std::size_t l = policy.effective_depth.value_or(0);

  net_->zero_grad();
  // comps[c]: gradient carried by routes that crossed c branches so far.
  std::vector<std::optional<Tensor>> comps(1);
  comps[0] = seed;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    Record& r = *it;
    std::vector<std::optional<Tensor>> next(comps.size() + (stratify && r.unit ? 1 : 0));
    for (std::size_t c = 0; c < comps.size(); ++c) {
      if (!comps[c]) continue;
      const Tensor& g = *comps[c];
      if (!r.unit) {
        accumulate(next[c], vjp(r.out, r.leaf, g));
        continue;
      }
      const RouteMode mode = policy.modes.empty() ? RouteMode::kBoth : policy.modes[r.ordinal];
      if (mode != RouteMode::kBranchOnly) {
        accumulate(next[c], r.shortcut.defined() ? vjp(r.shortcut, r.leaf, g) : g);
      }
      if (mode != RouteMode::kShortcutOnly && (!stratify || c < l)) {
        accumulate(next[stratify ? c + 1 : c], vjp(r.branch, r.leaf, g));
      }
    }
    comps = std::move(next);
  }

  RouteGrads out;
  std::optional<Tensor> total;
  for (auto& c : comps) {
    if (c) accumulate(total, *c);
  }
  out.input_grad = total ? *total : Tensor::zeros(records_.empty() ? seed.shape()
                                                                   : records_.front().leaf.shape());
  out.param_grads = collect_param_grads(*net_);
  return out;
}

RouteGrads full_gradients(Network& net, const Tensor& x, const Tensor& seed,
                          const arch::RunOptions& opts) {
  net.zero_grad();
  Tensor leaf = x.detach(true);
  Tensor y = net.forward(leaf, opts);
  y.backward(seed);
  RouteGrads out;
  if (leaf.has_grad()) {
    auto g = leaf.grad();
    out.input_grad = Tensor::from(leaf.shape(), std::vector<double>(g.begin(), g.end()));
  } else {
    out.input_grad = Tensor::zeros(leaf.shape());
  }
  out.param_grads = collect_param_grads(net);
  return out;
}

std::map<std::string, Tensor> unit_param_grads(const Network& net,
                                               std::size_t layer_index,
                                               const RouteGrads& grads) {
  std::map<std::string, Tensor> out;
  for (const auto& ps : arch::param_shapes(net.layers().at(layer_index))) {
    out[ps.name] = grads.param_grads.at(ps.name);
  }
  return out;
}

GradDecomposition grad_decomposition(Network& net, const Tensor& x,
                                     const Tensor& upstream) {
  const auto units = chain_units(net);
  if (units.size() != 2 || net.size() != 2) {
    throw UnsupportedChain("decomposition needs a chain of exactly two units");
  }
  GradDecomposition out;
  RoutedGraph graph(net, x);
  out.term_direct = unit_param_grads(
      net, 0, graph.backward(upstream, {{RouteMode::kBoth, RouteMode::kShortcutOnly}, {}}));
  out.term_via_f2 = unit_param_grads(
      net, 0, graph.backward(upstream, {{RouteMode::kBoth, RouteMode::kBranchOnly}, {}}));
  out.full = unit_param_grads(net, 0, full_gradients(net, x, upstream));
  return out;
}

EffectiveDepthView::EffectiveDepthView(Network& net, std::size_t l) : net_(&net), l_(l) {
  if (l == 0) throw std::invalid_argument("effective depth must be at least 1");
}

Tensor EffectiveDepthView::forward(const Tensor& x, const arch::RunOptions& opts) {
  return net_->forward(x, opts);
}

RouteGrads EffectiveDepthView::gradients(const Tensor& x, const Tensor& seed,
                                         const arch::RunOptions& opts) {
  RoutedGraph graph(*net_, x, opts);
  return graph.backward(seed, {{}, l_});
}

EffectiveDepthView truncate_effective_depth(Network& net, std::size_t l) {
  return EffectiveDepthView(net, l);
}

std::vector<Route> enumerate_routes(Network& net, const Tensor& x, const Tensor& seed,
                                    std::size_t target) {
  RoutedGraph graph(net, x);
  const std::size_t d = graph.unit_count();
  if (target >= d) throw std::out_of_range("route target beyond the last unit");
  const std::size_t above = d - 1 - target;
  if (above >= 20) throw std::invalid_argument("too many routes to enumerate");
  std::vector<Route> routes;
  for (std::size_t mask = 0; mask < (std::size_t{1} << above); ++mask) {
    Route r;
    r.modes.assign(d, RouteMode::kBoth);
    r.modes[target] = RouteMode::kBranchOnly;
    for (std::size_t j = 0; j < above; ++j) {
      r.modes[target + 1 + j] =
          (mask >> j) & 1 ? RouteMode::kBranchOnly : RouteMode::kShortcutOnly;
    }
    r.branch_count = 1 + static_cast<std::size_t>(std::popcount(mask));
    r.grads = graph.backward(seed, {r.modes, {}});
    routes.push_back(std::move(r));
  }
  return routes;
}

std::map<std::string, Tensor> add_grads(const std::map<std::string, Tensor>& a,
                                        const std::map<std::string, Tensor>& b) {
  NoGradGuard ng;
  std::map<std::string, Tensor> out = a;
  for (const auto& [name, t] : b) {
    auto it = out.find(name);
    if (it == out.end()) {
      out[name] = t;
    } else {
      it->second = add(it->second, t);
    }
  }
  return out;
}

double rel_diff(const std::map<std::string, Tensor>& a,
                const std::map<std::string, Tensor>& b) {
  double num = 0.0, den = 0.0;
  for (const auto& [name, tb] : b) {
    const auto it = a.find(name);
    if (it == a.end()) throw std::invalid_argument("gradient map lacks " + name);
    const Tensor& ta = it->second;
    if (ta.shape() != tb.shape()) throw ShapeError("gradient shape mismatch for " + name);
    for (std::size_t i = 0; i < tb.numel(); ++i) {
      const double d = ta.at(i) - tb.at(i);
      num += d * d;
      den += tb.at(i) * tb.at(i);
    }
  }
  if (a.size() != b.size()) throw std::invalid_argument("gradient maps differ in keys");
  if (den == 0.0) return num == 0.0 ? 0.0 : INFINITY;
  return std::sqrt(num / den);
}

}  // namespace rna::unravel
