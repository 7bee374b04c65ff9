// SPDX-License-Identifier: Apache-2.0
#include "rna/arch/network.hpp"

#include <cmath>

namespace rna::arch {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string stage_prefix(const std::string& unit, std::size_t j) {
  return unit + ".s" + std::to_string(j + 1);
}

void stage_params(const std::string& prefix, const ConvStage& st,
                  std::vector<ParamShape>& out) {
  if (st.preact) {
    out.push_back({prefix + ".bn.gamma", {st.in}});
    out.push_back({prefix + ".bn.beta", {st.in}});
  }
  out.push_back({prefix + ".conv.weight", {st.out, st.in, st.kernel, st.kernel}});
  if (st.bias) out.push_back({prefix + ".conv.bias", {st.out}});
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::vector<ConvStage> SegHeadLayer::stages() const {
  if (kind == SegHeadKind::kOneConv) {
    return {ConvStage{in, classes, 3, 1, dilation, false, true}};
  }
  return {ConvStage{in, hidden, 3, 1, dilation, false, true},
          ConvStage{hidden, classes, 3, 1, dilation, false, true}};
}

const std::string& layer_name(const Layer& layer) {
  return std::visit([](const auto& l) -> const std::string& { return l.name; },
                    layer);
}

std::vector<ParamShape> param_shapes(const Layer& layer) {
  std::vector<ParamShape> out;
  std::visit(
      Overloaded{
          [&](const StemLayer& l) { stage_params(l.name, l.conv, out); },
          [&](const PoolLayer&) {},
          [&](const UnitLayer& l) {
            for (std::size_t j = 0; j < l.stages.size(); ++j) {
              stage_params(stage_prefix(l.name, j), l.stages[j], out);
            }
            if (l.shortcut == ShortcutKind::kProjection) {
              out.push_back({l.name + ".proj.weight", {l.out(), l.in(), 1, 1}});
            }
          },
          [&](const PostActLayer& l) {
            out.push_back({l.name + ".bn.gamma", {l.channels}});
            out.push_back({l.name + ".bn.beta", {l.channels}});
          },
          [&](const ClassifierLayer& l) {
            out.push_back({l.name + ".fc.weight", {l.classes, l.in}});
            out.push_back({l.name + ".fc.bias", {l.classes}});
          },
          [&](const SegHeadLayer& l) {
            const auto st = l.stages();
            for (std::size_t j = 0; j < st.size(); ++j) {
              stage_params(stage_prefix(l.name, j), st[j], out);
            }
          },
      },
      layer);
  return out;
}

std::vector<std::pair<std::string, std::size_t>> bn_slots(const Layer& layer) {
  std::vector<std::pair<std::string, std::size_t>> out;
  if (const auto* u = std::get_if<UnitLayer>(&layer)) {
    for (std::size_t j = 0; j < u->stages.size(); ++j) {
      if (u->stages[j].preact) {
        out.emplace_back(stage_prefix(u->name, j) + ".bn", u->stages[j].in);
      }
    }
  } else if (const auto* p = std::get_if<PostActLayer>(&layer)) {
    out.emplace_back(p->name + ".bn", p->channels);
  }
  return out;
}

void validate(const NetworkSpec& spec) {
  if (spec.input_size == 0) throw BuildError("input size must be positive");
  if (spec.num_classes == 0) throw BuildError("class count must be positive");
  std::size_t cur = spec.stem_width();
  for (std::size_t l = 0; l < kLevels; ++l) {
    const std::string level = "B" + std::to_string(l + 1);
    if (spec.level_widths[l] == 0) {
      throw BuildError(level + " width must be positive");
    }
    if (spec.units[l] == 0) {
      if (spec.downsample[l] == Downsample::kStride) {
        throw BuildError(level +
                         " uses stride downsampling but has no unit to carry it");
      }
      continue;
    }
    const std::size_t w = spec.level_widths[l];
    if (level_kind(l) == UnitKind::kBottleneck && w % 4 != 0) {
      throw BuildError(level + " bottleneck width " + std::to_string(w) +
                       " must be divisible by 4");
    }
    if (spec.shortcut == ShortcutPolicy::kPadIdentity && w < cur) {
      throw BuildError(level + " narrows from " + std::to_string(cur) + " to " +
                       std::to_string(w) +
                       " channels; zero-padded identity shortcuts cannot");
    }
    cur = w;
  }
}

std::vector<Layer> layout(const NetworkSpec& spec) {
  validate(spec);
  std::vector<Layer> layers;
  layers.emplace_back(
      StemLayer{"stem", ConvStage{3, spec.stem_width(), 3, 1, 1, false, false}});
  std::size_t cur = spec.stem_width();
  for (std::size_t l = 0; l < kLevels; ++l) {
    const std::string level = "b" + std::to_string(l + 1);
    if (spec.downsample[l] == Downsample::kPool) {
      layers.emplace_back(PoolLayer{level + ".pool", l, PoolParams{3, 2, 1, 1}});
    }
    const std::size_t w = spec.level_widths[l];
    for (std::size_t u = 0; u < spec.units[l]; ++u) {
      UnitLayer unit;
      unit.name = level + ".u" + std::to_string(u + 1);
      unit.level = l;
      unit.kind = level_kind(l);
      const std::size_t stride =
          (u == 0 && spec.downsample[l] == Downsample::kStride) ? 2 : 1;
      if (unit.kind == UnitKind::kTwoStage) {
        unit.stages = {ConvStage{cur, w, 3, stride, 1, true, false},
                       ConvStage{w, w, 3, 1, 1, true, false}};
      } else {
        unit.stages = {ConvStage{cur, w / 4, 1, stride, 1, true, false},
                       ConvStage{w / 4, w / 2, 3, 1, 1, true, false},
                       ConvStage{w / 2, w, 1, 1, 1, true, false}};
      }
      if (cur == w && stride == 1) {
        unit.shortcut = ShortcutKind::kIdentity;
      } else {
        unit.shortcut = spec.shortcut == ShortcutPolicy::kProjection
                            ? ShortcutKind::kProjection
                            : ShortcutKind::kPadIdentity;
      }
      unit.shortcut_stride = stride;
      layers.emplace_back(std::move(unit));
      cur = w;
    }
  }
  layers.emplace_back(PostActLayer{"post", cur});
  layers.emplace_back(ClassifierLayer{"head", cur, spec.num_classes});
  return layers;
}

Network::Network(std::vector<Layer> layers, const InitOptions& init)
    : layers_(std::move(layers)) {
  Rng rng(init.seed);
  for (const auto& layer : layers_) allocate(layer, rng, init.scale);
}

void Network::allocate(const Layer& layer, Rng& rng, double scale) {
  for (const auto& ps : param_shapes(layer)) {
    std::vector<double> v(shape_numel(ps.shape), 0.0);
    if (ends_with(ps.name, ".gamma")) {
      std::fill(v.begin(), v.end(), 1.0);
    } else if (ends_with(ps.name, ".weight")) {
      const std::size_t fan_in = shape_numel(ps.shape) / ps.shape[0];
      const double sd = std::sqrt(scale / static_cast<double>(fan_in));
      for (auto& e : v) e = rng.normal(0.0, sd);
    }
    params_[ps.name] = Tensor::from(ps.shape, std::move(v), true);
  }
  for (const auto& [prefix, channels] : bn_slots(layer)) {
    bn_.emplace(prefix, BnState(channels));
  }
}

Network Network::clone() const {
  Network copy;
  copy.layers_ = layers_;
  copy.bn_ = bn_;
  copy.spec_ = spec_;
  for (const auto& [name, t] : params_) copy.params_[name] = t.detach(true);
  return copy;
}

void Network::insert_layer(std::size_t position, Layer layer,
                           const InitOptions& init) {
  if (position > layers_.size()) throw std::out_of_range("insert_layer");
  Rng rng(init.seed);
  allocate(layer, rng, init.scale);
  layers_.insert(layers_.begin() + static_cast<std::ptrdiff_t>(position),
                 std::move(layer));
}

void Network::erase_layer(std::size_t position) {
  if (position >= layers_.size()) throw std::out_of_range("erase_layer");
  for (const auto& ps : param_shapes(layers_[position])) params_.erase(ps.name);
  for (const auto& [prefix, c] : bn_slots(layers_[position])) bn_.erase(prefix);
  layers_.erase(layers_.begin() + static_cast<std::ptrdiff_t>(position));
}

const Tensor& Network::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter " + name);
  return it->second;
}

Tensor& Network::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter " + name);
  return it->second;
}

std::vector<Tensor> Network::parameters() const {
  std::vector<Tensor> out;
  for (const auto& layer : layers_) {
    for (const auto& ps : param_shapes(layer)) out.push_back(params_.at(ps.name));
  }
  return out;
}

std::vector<Tensor> Network::layer_parameters(std::size_t index) const {
  std::vector<Tensor> out;
  for (const auto& ps : param_shapes(layers_.at(index))) {
    out.push_back(params_.at(ps.name));
  }
  return out;
}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void Network::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

BnState& Network::bn_state(const std::string& prefix) {
  auto it = bn_.find(prefix);
  if (it == bn_.end()) throw std::out_of_range("no normalization " + prefix);
  return it->second;
}

void Network::init_running_stats_identity() {
  for (auto& [prefix, st] : bn_) st.reset_identity();
}

TensorMap Network::state_dict() const {
  TensorMap out;
  for (const auto& [name, t] : params_) out[name] = t.detach();
  for (const auto& [prefix, st] : bn_) {
    if (!st.initialized) continue;
    const Shape s{st.running_mean.size()};
    out[prefix + ".running_mean"] = Tensor::from(s, st.running_mean);
    out[prefix + ".running_var"] = Tensor::from(s, st.running_var);
  }
  return out;
}

void Network::load_state_dict(const TensorMap& state, bool strict) {
  std::size_t used = 0;
  for (auto& [name, t] : params_) {
    auto it = state.find(name);
    if (it == state.end()) {
      if (strict) throw FormatError("weights lack parameter " + name);
      continue;
    }
    if (it->second.shape() != t.shape()) {
      throw FormatError("parameter " + name + " has shape " +
                        shape_str(it->second.shape()) + ", expected " +
                        shape_str(t.shape()));
    }
    auto dst = t.mutable_values();
    auto src = it->second.values();
    std::copy(src.begin(), src.end(), dst.begin());
    ++used;
  }
  for (auto& [prefix, st] : bn_) {
    auto m = state.find(prefix + ".running_mean");
    auto v = state.find(prefix + ".running_var");
    if (m == state.end() || v == state.end()) continue;
    if (m->second.numel() != st.running_mean.size() ||
        v->second.numel() != st.running_var.size()) {
      throw FormatError("running statistics of " + prefix + " have wrong size");
    }
    st.running_mean.assign(m->second.values().begin(), m->second.values().end());
    st.running_var.assign(v->second.values().begin(), v->second.values().end());
    st.initialized = true;
    used += 2;
  }
  if (strict && used != state.size()) {
    for (const auto& [name, t] : state) {
      const bool known =
          params_.count(name) ||
          (ends_with(name, ".running_mean") &&
           bn_.count(name.substr(0, name.size() - 13))) ||
          (ends_with(name, ".running_var") &&
           bn_.count(name.substr(0, name.size() - 12)));
      if (!known) throw FormatError("unexpected tensor " + name + " in weights");
    }
  }
}

Tensor Network::run_stage(const std::string& prefix, const ConvStage& st,
                          const Tensor& x, const RunOptions& opts,
                          double dropout_rate) {
  Tensor h = x;
  if (st.preact) {
    h = relu(batchnorm(h, param(prefix + ".bn.gamma"), param(prefix + ".bn.beta"),
                       bn_state(prefix + ".bn"), opts.bn));
  }
  if (dropout_rate > 0.0 && opts.training) {
    if (!opts.rng) throw std::logic_error("dropout needs RunOptions::rng");
    h = dropout(h, dropout_rate, true, *opts.rng);
  }
  const Tensor* bias = nullptr;
  if (st.bias) bias = &param(prefix + ".conv.bias");
  return conv2d(h, param(prefix + ".conv.weight"), st.conv_params(), bias);
}

Tensor Network::unit_branch(std::size_t index, const Tensor& x,
                            const RunOptions& opts) {
  const auto* unit = std::get_if<UnitLayer>(&layers_.at(index));
  if (!unit) throw std::invalid_argument("layer is not a residual unit");
  Tensor h = x;
  for (std::size_t j = 0; j < unit->stages.size(); ++j) {
    const double rate = j + 1 == unit->stages.size() ? unit->dropout : 0.0;
    h = run_stage(stage_prefix(unit->name, j), unit->stages[j], h, opts, rate);
  }
  return h;
}

Tensor Network::unit_shortcut(std::size_t index, const Tensor& x,
                              const RunOptions&) {
  const auto* unit = std::get_if<UnitLayer>(&layers_.at(index));
  if (!unit) throw std::invalid_argument("layer is not a residual unit");
  const Conv2dParams p{unit->shortcut_stride, 0, 1};
  switch (unit->shortcut) {
    case ShortcutKind::kIdentity:
      return x;
    case ShortcutKind::kProjection:
      return conv2d(x, param(unit->name + ".proj.weight"), p);
    case ShortcutKind::kPadIdentity: {
      const std::size_t in = unit->in(), out = unit->out();
      std::vector<double> k(out * in, 0.0);
      for (std::size_t c = 0; c < std::min(in, out); ++c) k[c * in + c] = 1.0;
      return conv2d(x, Tensor::from({out, in, 1, 1}, std::move(k)), p);
    }
  }
  return x;
}

Tensor Network::forward_layer(std::size_t index, const Tensor& x,
                              const RunOptions& opts) {
  return std::visit(
      Overloaded{
          [&](const StemLayer& l) {
            return run_stage(l.name, l.conv, x, opts, 0.0);
          },
          [&](const PoolLayer& l) { return maxpool(x, l.pool); },
          [&](const UnitLayer&) {
            return add(unit_branch(index, x, opts), unit_shortcut(index, x, opts));
          },
          [&](const PostActLayer& l) {
            return relu(batchnorm(x, param(l.name + ".bn.gamma"),
                                  param(l.name + ".bn.beta"),
                                  bn_state(l.name + ".bn"), opts.bn));
          },
          [&](const ClassifierLayer& l) {
            const Tensor& b = param(l.name + ".fc.bias");
            return linear(global_avgpool(x), param(l.name + ".fc.weight"), &b);
          },
          [&](const SegHeadLayer& l) {
            const auto st = l.stages();
            Tensor h = run_stage(stage_prefix(l.name, 0), st[0], x, opts, 0.0);
            if (st.size() == 2) {
              h = run_stage(stage_prefix(l.name, 1), st[1], relu(h), opts, 0.0);
            }
            return h;
          },
      },
      layers_.at(index));
}

Tensor Network::forward_range(const Tensor& x, std::size_t begin,
                              std::size_t end, const RunOptions& opts) {
  Tensor h = x;
  for (std::size_t i = begin; i < end; ++i) h = forward_layer(i, h, opts);
  return h;
}

Tensor Network::forward(const Tensor& x, const RunOptions& opts) {
  return forward_range(x, 0, layers_.size(), opts);
}

Network build(const NetworkSpec& spec, const InitOptions& init) {
  Network net(layout(spec), init);
  net.set_spec(spec);
  return net;
}

}  // namespace rna::arch
