// SPDX-License-Identifier: Apache-2.0
#include "rna/arch/stats.hpp"

#include <sstream>

namespace rna::arch {

namespace {

std::size_t apply(std::size_t extent, std::size_t kernel, std::size_t stride,
                  std::size_t pad, std::size_t dilation) {
  return window_out_extent(extent, kernel, stride, pad, dilation);
}

MapShape apply_stage(MapShape m, const ConvStage& st) {
  m.height = apply(m.height, st.kernel, st.stride, st.padding(), st.dilation);
  m.width = apply(m.width, st.kernel, st.stride, st.padding(), st.dilation);
  m.channels = st.out;
  return m;
}

void push_stage(std::vector<RfStep>& steps, const ConvStage& st) {
  steps.push_back({st.kernel, st.stride, st.dilation});
}

}  // namespace

std::vector<MapShape> trace_shapes(const std::vector<Layer>& layers,
                                   std::size_t height, std::size_t width,
                                   std::size_t channels) {
  std::vector<MapShape> out;
  MapShape cur{channels, height, width};
  for (const auto& layer : layers) {
    if (const auto* s = std::get_if<StemLayer>(&layer)) {
      cur = apply_stage(cur, s->conv);
    } else if (const auto* p = std::get_if<PoolLayer>(&layer)) {
      const auto& pp = p->pool;
      cur.height = apply(cur.height, pp.kernel, pp.stride, pp.padding, pp.dilation);
      cur.width = apply(cur.width, pp.kernel, pp.stride, pp.padding, pp.dilation);
    } else if (const auto* u = std::get_if<UnitLayer>(&layer)) {
      for (const auto& st : u->stages) cur = apply_stage(cur, st);
    } else if (const auto* h = std::get_if<SegHeadLayer>(&layer)) {
      for (const auto& st : h->stages()) cur = apply_stage(cur, st);
    } else if (const auto* c = std::get_if<ClassifierLayer>(&layer)) {
      cur = MapShape{c->classes, 1, 1};
    }
    out.push_back(cur);
  }
  return out;
}

std::size_t count_trainable_layers(const std::vector<Layer>& layers) {
  std::size_t n = 0;
  for (const auto& layer : layers) {
    if (std::holds_alternative<StemLayer>(layer) ||
        std::holds_alternative<ClassifierLayer>(layer)) {
      ++n;
    } else if (const auto* u = std::get_if<UnitLayer>(&layer)) {
      n += u->stages.size();
    } else if (const auto* h = std::get_if<SegHeadLayer>(&layer)) {
      n += h->stages().size();
    }
  }
  return n;
}

std::size_t count_params(const std::vector<Layer>& layers) {
  std::size_t n = 0;
  for (const auto& layer : layers) {
    for (const auto& ps : param_shapes(layer)) n += shape_numel(ps.shape);
  }
  return n;
}

NetworkStats stats(const NetworkSpec& spec) {
  const auto layers = layout(spec);
  NetworkStats s;
  s.depth = spec.depth();
  s.unit_count = spec.unit_count();
  s.param_count = count_params(layers);
  s.downsample_ops = spec.downsample_count();
  const auto shapes = trace_shapes(layers, spec.input_size, spec.input_size);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (const auto* u = std::get_if<UnitLayer>(&layers[i])) {
      s.level_map[u->level] = shapes[i].height;
    } else if (const auto* p = std::get_if<PoolLayer>(&layers[i])) {
      s.level_map[p->level] = shapes[i].height;
    }
  }
  // Empty levels between populated ones sit at the running resolution.
  std::optional<std::size_t> running = shapes.front().height;
  for (std::size_t l = 0; l < kLevels; ++l) {
    if (s.level_map[l]) {
      running = s.level_map[l];
    } else {
      s.level_map[l] = running;
    }
  }
  s.final_map = shapes[shapes.size() - 2];  // output of the post-activation
  s.feature_dim = s.final_map.channels;
  return s;
}

std::vector<RfStep> main_path(const std::vector<Layer>& layers,
                              std::size_t last) {
  if (last >= layers.size()) throw std::out_of_range("main_path: layer index");
  std::vector<RfStep> steps;
  for (std::size_t i = 0; i <= last; ++i) {
    const auto& layer = layers[i];
    if (const auto* s = std::get_if<StemLayer>(&layer)) {
      push_stage(steps, s->conv);
    } else if (const auto* p = std::get_if<PoolLayer>(&layer)) {
      steps.push_back({p->pool.kernel, p->pool.stride, p->pool.dilation});
    } else if (const auto* u = std::get_if<UnitLayer>(&layer)) {
      for (const auto& st : u->stages) push_stage(steps, st);
    } else if (const auto* h = std::get_if<SegHeadLayer>(&layer)) {
      for (const auto& st : h->stages()) push_stage(steps, st);
    }
  }
  return steps;
}

std::size_t receptive_field(std::span<const RfStep> steps,
                            std::size_t base_jump) {
  std::size_t rf = base_jump, jump = base_jump;
  for (const auto& s : steps) {
    rf += (s.kernel - 1) * s.dilation * jump;
    jump *= s.stride;
  }
  return rf;
}

std::size_t receptive_field(const Network& net, std::size_t last) {
  const auto steps = main_path(net.layers(), last);
  return receptive_field(steps);
}

std::size_t output_stride(const std::vector<Layer>& layers, std::size_t last) {
  std::size_t jump = 1;
  for (const auto& s : main_path(layers, last)) jump *= s.stride;
  return jump;
}

std::string stats_csv_header() { return "config,depth,units,params"; }

std::string stats_csv_row(const std::string& config, const NetworkStats& s) {
  return config + "," + std::to_string(s.depth) + "," +
         std::to_string(s.unit_count) + "," + std::to_string(s.param_count);
}

std::string stats_text(const NetworkSpec& spec, const NetworkStats& s) {
  std::ostringstream os;
  os << "network " << spec.name() << "\n"
     << "  depth          " << s.depth << "\n"
     << "  residual units " << s.unit_count << "\n"
     << "  parameters     " << s.param_count << "\n"
     << "  downsamplings  " << s.downsample_ops << "\n"
     << "  level maps    ";
  for (std::size_t l = 0; l < kLevels; ++l) {
    os << " B" << (l + 1) << ":";
    if (s.level_map[l]) {
      os << *s.level_map[l] << "x" << *s.level_map[l];
    } else {
      os << "-";
    }
    os << "(" << spec.units[l] << ")";
  }
  os << "\n  final map      " << s.final_map.channels << "x"
     << s.final_map.height << "x" << s.final_map.width << "\n";
  return os.str();
}

}  // namespace rna::arch
