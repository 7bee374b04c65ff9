// SPDX-License-Identifier: Apache-2.0
#include <fmt/format.h>

#include "rna/seg.hpp"

namespace rna::seg {

using arch::ConvStage;
using arch::Network;
using arch::PoolLayer;
using arch::UnitLayer;

namespace {

std::string stage_part(std::size_t j) { return "s" + std::to_string(j + 1); }

struct Downsampler {
  std::size_t layer;
  std::size_t stride;
};

std::vector<Downsampler> downsamplers(const Network& net) {
  std::vector<Downsampler> out;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto& layer = net.layers()[i];
    if (const auto* p = std::get_if<PoolLayer>(&layer)) {
      if (p->pool.stride > 1) out.push_back({i, p->pool.stride});
    } else if (const auto* s = std::get_if<arch::StemLayer>(&layer)) {
      if (s->conv.stride > 1) out.push_back({i, s->conv.stride});
    } else if (const auto* u = std::get_if<UnitLayer>(&layer)) {
      std::size_t stride = 1;
      for (const auto& st : u->stages) stride *= st.stride;
      if (stride > 1) out.push_back({i, stride});
    }
  }
  return out;
}

}  // namespace

Network pool_to_stride(const Network& net, std::size_t top_k) {
  std::vector<std::size_t> pools;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto* p = std::get_if<PoolLayer>(&net.layers()[i]);
    if (p && p->pool.stride > 1) pools.push_back(i);
  }
  if (top_k > pools.size()) {
    throw RewriteError(fmt::format("asked to convert {} pooling downsamples, network has {}",
                                   top_k, pools.size()));
  }
  Network out = net.clone();
  const auto policy = net.spec() ? net.spec()->shortcut : arch::ShortcutPolicy::kProjection;
  auto spec = net.spec();
  // Highest index first so earlier positions stay valid.
  for (std::size_t r = 0; r < top_k; ++r) {
    const std::size_t p = pools[pools.size() - 1 - r];
    const auto pool = std::get<PoolLayer>(out.layers()[p]);
    const auto* next = p + 1 < out.size() ? std::get_if<UnitLayer>(&out.layers()[p + 1]) : nullptr;
    if (!next || next->level != pool.level) {
      throw RewriteError("no convolution follows " + pool.name + " on its level");
    }
    UnitLayer unit = *next;
    if (unit.stages.front().stride != 1) {
      throw RewriteError("unit " + unit.name + " already downsamples");
    }
    unit.stages.front().stride = pool.pool.stride;
    unit.shortcut_stride = pool.pool.stride;

    std::map<std::string, Tensor> saved;
    for (const auto& ps : arch::param_shapes(*next)) saved[ps.name] = out.param(ps.name);
    std::map<std::string, BnState> saved_bn;
    for (const auto& [prefix, c] : arch::bn_slots(*next)) saved_bn[prefix] = out.bn_state(prefix);

    bool new_projection = false;
    if (unit.shortcut == arch::ShortcutKind::kIdentity) {
      if (policy == arch::ShortcutPolicy::kProjection) {
        unit.shortcut = arch::ShortcutKind::kProjection;
        new_projection = true;
      } else {
        unit.shortcut = arch::ShortcutKind::kPadIdentity;
      }
    }
    out.erase_layer(p + 1);
    out.insert_layer(p + 1, unit, {});
    for (auto& [name, t] : saved) out.param(name) = t;
    for (auto& [prefix, st] : saved_bn) out.bn_state(prefix) = st;
    if (new_projection) {
      auto v = out.param(unit.name + ".proj.weight").mutable_values();
      std::fill(v.begin(), v.end(), 0.0);
      for (std::size_t c = 0; c < unit.in(); ++c) v[c * unit.in() + c] = 1.0;
    }
    out.erase_layer(p);
    if (spec) spec->downsample[pool.level] = arch::Downsample::kStride;
  }
  if (spec) out.set_spec(*spec);
  return out;
}

std::size_t default_target_stride(const arch::NetworkSpec& spec) {
  std::size_t stride = 1;
  for (const auto& l : arch::main_path(arch::layout(spec), arch::layout(spec).size() - 1)) {
    stride *= l.stride;
  }
  const auto family = arch::default_downsampling(spec.input_size);
  const bool family_224 = family[5] == arch::Downsample::kPool;
  return family_224 ? std::min<std::size_t>(8, stride) : stride;
}

DilationPlan plan_dilation(const Network& net, std::size_t target_stride) {
  const auto points = downsamplers(net);
  std::size_t total = 1;
  for (const auto& p : points) total *= p.stride;
  if (target_stride == 0 || total % target_stride != 0) {
    throw RewriteError(fmt::format("output stride {} is not reachable from {}", target_stride, total));
  }
  // Removed downsamplers, top-most first.
  std::vector<std::size_t> removed;
  for (auto it = points.rbegin(); it != points.rend() && total > target_stride; ++it) {
    total /= it->stride;
    removed.push_back(it->layer);
  }
  if (total != target_stride) {
    throw RewriteError(fmt::format("removing whole downsamples cannot reach output stride {}",
                                   target_stride));
  }
  DilationPlan plan;
  plan.target_stride = target_stride;
  if (removed.empty()) return plan;
  const std::size_t first = removed.back();
  auto is_removed = [&](std::size_t i) {
    return std::find(removed.begin(), removed.end(), i) != removed.end();
  };

  std::size_t factor = 1;
  for (std::size_t i = first; i < net.size(); ++i) {
    const auto& layer = net.layers()[i];
    const std::string& name = arch::layer_name(layer);
    auto conv_step = [&](const std::string& part, const ConvStage& st, bool strip) {
      DilationStep s{i, name, part, st.stride, strip ? 1 : st.stride, st.dilation,
                     st.dilation * factor};
      plan.steps.push_back(s);
      if (strip) factor *= st.stride;
    };
    if (const auto* p = std::get_if<PoolLayer>(&layer)) {
      const bool strip = is_removed(i);
      plan.steps.push_back({i, name, "pool", p->pool.stride, strip ? 1 : p->pool.stride,
                            p->pool.dilation, p->pool.dilation * factor});
      if (strip) factor *= p->pool.stride;
    } else if (const auto* st = std::get_if<arch::StemLayer>(&layer)) {
      conv_step("stem", st->conv, is_removed(i));
    } else if (const auto* u = std::get_if<UnitLayer>(&layer)) {
      const bool strip = is_removed(i);
      if (u->shortcut != arch::ShortcutKind::kIdentity && u->shortcut_stride > 1) {
        plan.steps.push_back({i, name, "shortcut", u->shortcut_stride,
                              strip ? 1 : u->shortcut_stride, 1, 1});
      }
      for (std::size_t j = 0; j < u->stages.size(); ++j) {
        conv_step(stage_part(j), u->stages[j], strip && u->stages[j].stride > 1);
      }
    } else if (std::holds_alternative<arch::SegHeadLayer>(layer) ||
               std::holds_alternative<arch::ClassifierLayer>(layer)) {
      break;
    }
  }
  return plan;
}

DilationPlan plan_dilation(const Network& net) {
  if (!net.spec()) throw RewriteError("network carries no spec; pass the target stride");
  return plan_dilation(net, default_target_stride(*net.spec()));
}

void apply_plan(Network& net, const DilationPlan& plan) {
  auto& layers = net.mutable_layers();
  auto mismatch = [](const DilationStep& s, const std::string& what) {
    return RewriteError(fmt::format("plan step {}/{} does not match the graph: {}", s.name,
                                    s.part, what));
  };
  for (const auto& s : plan.steps) {
    if (s.layer >= layers.size() || arch::layer_name(layers[s.layer]) != s.name) {
      throw mismatch(s, "layer index");
    }
    auto& layer = layers[s.layer];
    auto edit = [&](std::size_t& stride, std::size_t& dilation) {
      if (stride != s.stride_before || dilation != s.dilation_before) {
        throw mismatch(s, "stride or dilation");
      }
      stride = s.stride_after;
      dilation = s.dilation_after;
    };
    if (auto* p = std::get_if<PoolLayer>(&layer); p && s.part == "pool") {
      edit(p->pool.stride, p->pool.dilation);
      p->pool.padding = same_padding(p->pool.kernel, p->pool.dilation);
    } else if (auto* st = std::get_if<arch::StemLayer>(&layer); st && s.part == "stem") {
      edit(st->conv.stride, st->conv.dilation);
    } else if (auto* u = std::get_if<UnitLayer>(&layer)) {
      if (s.part == "shortcut") {
        std::size_t dil = 1;
        edit(u->shortcut_stride, dil);
        continue;
      }
      std::size_t j = 0;
      for (; j < u->stages.size(); ++j) {
        if (stage_part(j) == s.part) break;
      }
      if (j == u->stages.size()) throw mismatch(s, "no such stage");
      edit(u->stages[j].stride, u->stages[j].dilation);
    } else {
      throw mismatch(s, "layer kind");
    }
  }
}

std::size_t head_receptive_field(const SegHead& head, std::size_t output_stride) {
  arch::SegHeadLayer layer{"seg", head.kind, 1, head.hidden, head.classes, head.dilation};
  std::vector<arch::RfStep> steps;
  for (const auto& st : layer.stages()) steps.push_back({st.kernel, st.stride, st.dilation});
  return arch::receptive_field(steps, output_stride);
}

DropoutPolicy DropoutPolicy::for_spec(const arch::NetworkSpec& spec) {
  DropoutPolicy p;
  p.rate_by_width = {{spec.level_widths[5], 0.3}, {spec.level_widths[6], 0.5}};
  return p;
}

double DropoutPolicy::rate_for(std::size_t width) const {
  const auto it = rate_by_width.find(width);
  return it == rate_by_width.end() ? 0.0 : it->second;
}

Network to_fcn(const Network& net, const DilationPlan& plan, const SegHead& head,
               const DropoutPolicy& dropout, const arch::InitOptions& init) {
  if (head.classes < 1) throw RewriteError("segmentation head needs at least one class");
  if (net.size() == 0 || !std::holds_alternative<arch::ClassifierLayer>(net.layers().back())) {
    throw RewriteError("expected a classification network ending in a classifier");
  }
  Network out = net.clone();
  out.erase_layer(out.size() - 1);
  apply_plan(out, plan);
  std::size_t width = 0;
  for (auto& layer : out.mutable_layers()) {
    if (auto* u = std::get_if<UnitLayer>(&layer)) {
      u->dropout = dropout.rate_for(u->out());
      width = u->out();
    } else if (const auto* s = std::get_if<arch::StemLayer>(&layer)) {
      width = s->conv.out;
    } else if (const auto* p = std::get_if<arch::PostActLayer>(&layer)) {
      width = p->channels;
    }
  }
  out.insert_layer(out.size(),
                   arch::SegHeadLayer{"seg", head.kind, width, head.hidden, head.classes,
                                      head.dilation},
                   init);
  return out;
}

std::size_t feature_layer(const Network& net) {
  for (std::size_t i = net.size(); i-- > 0;) {
    const auto& l = net.layers()[i];
    if (!std::holds_alternative<arch::SegHeadLayer>(l) &&
        !std::holds_alternative<arch::ClassifierLayer>(l)) {
      return i;
    }
  }
  throw std::invalid_argument("network has no feature layers");
}

}  // namespace rna::seg
