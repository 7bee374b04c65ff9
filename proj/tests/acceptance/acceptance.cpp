// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
// failure.
#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>

#include "../support/gradcheck.hpp"
#include "rna/arch/stats.hpp"
#include "rna/harness/config.hpp"
#include "rna/harness/metrics.hpp"
#include "rna/harness/train.hpp"
#include "rna/pathprof.hpp"
#include "rna/seg.hpp"
#include "rna/unravel.hpp"

using namespace rna;
using rna::testing::check_gradients;
using rna::testing::random_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Chain with non-trivial frozen statistics and shifts.
arch::Network random_chain(std::size_t d, std::size_t w, arch::UnitKind kind, std::size_t classes,
                           std::uint64_t seed) {
  auto net = unravel::make_chain({d, w, kind, classes}, {seed});
  Rng rng(seed ^ 0x5eedULL);
  std::vector<std::string> prefixes;
  for (const auto& [p, st] : net.bn_states()) prefixes.push_back(p);
  for (const auto& p : prefixes) {
    auto& st = net.bn_state(p);
    for (auto& v : st.running_mean) v = rng.uniform(-0.2, 0.2);
    for (auto& v : st.running_var) v = rng.uniform(0.5, 2.0);
    for (auto& v : net.param(p + ".beta").mutable_values()) v = rng.uniform(-0.3, 0.3);
    for (auto& v : net.param(p + ".gamma").mutable_values()) v = rng.uniform(0.5, 1.5);
  }
  return net;
}

arch::UnitKind random_rectified_kind(std::size_t w, Rng& rng) {
  if (w % 4 == 0 && rng.below(2) == 1) return arch::UnitKind::kBottleneck;
  return arch::UnitKind::kTwoStage;
}

Outcome depth_table() {
  const auto t0 = Clock::now();
  const std::array<std::pair<const char*, std::size_t>, 7> table{{{"56-1-1-1-1-9-1-1", 34},
                                                                  {"112-1-1-1-1-5-1-1", 26},
                                                                  {"112-1-1-1-1-9-1-1", 34},
                                                                  {"112-1-1-1-1-13-1-1", 42},
                                                                  {"224-0-1-1-1-1-1-1", 16},
                                                                  {"224-0-1-1-1-3-1-1", 20},
                                                                  {"224-0-3-3-6-3-1-1", 38}}};
  bool ok = true;
  std::string got;
  for (const auto& [name, depth] : table) {
    const auto s = arch::stats(arch::parse_spec(name));
    ok = ok && s.depth == depth;
    got += fmt::format("{}{}", got.empty() ? "" : ",", s.depth);
  }
  const auto units = arch::stats(arch::parse_spec("224-0-3-3-6-3-1-1")).unit_count;
  const double secs = seconds_since(t0);
  ok = ok && units == 17 && secs < 1.0;
  return {ok, fmt::format("depths ({}), model A units {}, {:.3f} s", got, units, secs)};
}

Outcome unravelled_sum() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t d = 1 + rng.below(8), w = 1 + rng.below(16), hw = 2 + rng.below(4);
    const auto kinds = std::array{arch::UnitKind::kTwoStage, arch::UnitKind::kBottleneck,
                                  arch::UnitKind::kLinear};
    auto kind = kinds[rng.below(3)];
    if (kind == arch::UnitKind::kBottleneck && w % 4 != 0) kind = arch::UnitKind::kTwoStage;
    auto net = random_chain(d, w, kind, 0, 100 + t);
    const auto x = random_tensor({2, w, hw, hw}, rng, 1.0, false);
    NoGradGuard ng;
    const auto fwd = net.forward(x, unravel::analysis_options());
    const auto terms = unravel::expand(net, x);
    if (terms.size() != d + 1) return {false, fmt::format("chain {} gave {} terms", t, terms.size())};
    worst = std::max(worst, unravel::l2_distance(unravel::sum_terms(terms), fwd) /
                                unravel::l2_norm(fwd.values()));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-8 && secs < 30.0,
          fmt::format("max relative gap {:.3e} over 50 chains, {:.2f} s", worst, secs)};
}

Outcome ensemble_refutation() {
  Rng rng(31);
  int positive = 0;
  double linear_worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t w = 1 + rng.below(16), hw = 2 + rng.below(4);
    auto net = random_chain(1, w, random_rectified_kind(w, rng), 0, 300 + t);
    const auto a = random_tensor({1, w, hw, hw}, rng, 1.0, false);
    const auto b = random_tensor({1, w, hw, hw}, rng, 1.0, false);
    positive += unravel::nonlinearity_gap(unravel::unit_mapping(net, 0), a, b) > 0.0;

    auto lin = random_chain(1, w, arch::UnitKind::kLinear, 0, 500 + t);
    linear_worst = std::max(linear_worst,
                            unravel::nonlinearity_gap(unravel::unit_mapping(lin, 0), a, b));
  }
  return {positive >= 99 && linear_worst <= 1e-12,
          fmt::format("rectified gap > 0 in {}/100, linear max gap {:.3e}", positive, linear_worst)};
}

Outcome gradient_decomposition() {
  Rng rng(41);
  double worst = 0.0;
  int exact = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t w = 1 + rng.below(12), hw = 2 + rng.below(3);
    auto net = random_chain(2, w, random_rectified_kind(w, rng), 0, 700 + t);
    const auto x = random_tensor({2, w, hw, hw}, rng, 1.0, false);
    const auto up = random_tensor({2, w, hw, hw}, rng, 1.0, false);
    const auto dec = unravel::grad_decomposition(net, x, up);
    worst = std::max(worst, unravel::rel_diff(unravel::add_grads(dec.term_direct, dec.term_via_f2),
                                              dec.full));
    const auto gated = unravel::unit_param_grads(
        net, 0, unravel::truncate_effective_depth(net, 1).gradients(x, up));
    bool same = gated.size() == dec.term_direct.size();
    for (const auto& [name, tensor] : dec.term_direct) {
      const auto it = gated.find(name);
      if (it == gated.end()) {
        same = false;
        break;
      }
      const auto a = it->second.values(), b = tensor.values();
      same = same && std::equal(a.begin(), a.end(), b.begin(), b.end());
    }
    exact += same;
  }
  return {worst < 1e-8 && exact == 100,
          fmt::format("max relative error {:.3e}, l=1 reproduces first term in {}/100", worst, exact)};
}

Outcome route_enumeration() {
  Rng rng(51);
  double worst = 0.0;
  int nets = 0;
  for (std::size_t d = 1; d <= 4; ++d) {
    for (int t = 0; t < 5; ++t) {
      const std::size_t w = 2 + rng.below(7);
      auto net = random_chain(d, w, random_rectified_kind(w, rng), 3, 900 + 10 * d + t);
      const auto x = random_tensor({2, w, 3, 3}, rng, 1.0, false);
      const auto seed = random_tensor({2, 3}, rng, 1.0, false);
      const auto routes = unravel::enumerate_routes(net, x, seed, 0);
      if (routes.size() != (std::size_t{1} << (d - 1))) {
        return {false, fmt::format("d={} gave {} routes", d, routes.size())};
      }
      std::map<std::string, Tensor> sum;
      for (const auto& r : routes) {
        const auto g = unravel::unit_param_grads(net, 0, r.grads);
        sum = sum.empty() ? g : unravel::add_grads(sum, g);
      }
      const auto full = unravel::unit_param_grads(net, 0, unravel::full_gradients(net, x, seed));
      worst = std::max(worst, unravel::rel_diff(sum, full));
      ++nets;
    }
  }
  return {worst < 1e-8, fmt::format("max relative error {:.3e} over {} nets, d = 1..4", worst, nets)};
}

Outcome finite_differences() {
  const auto t0 = Clock::now();
  Rng rng(61);
  std::vector<std::pair<std::string, double>> errs;
  auto run = [&](const std::string& name, const std::function<Tensor()>& f,
                 std::vector<Tensor> params) {
    errs.emplace_back(name, check_gradients(f, std::move(params)).max_rel_err);
  };

  auto x = random_tensor({2, 3, 6, 6}, rng);
  auto w = random_tensor({4, 3, 3, 3}, rng, 0.5);
  auto cb = random_tensor({4}, rng);
  run("conv2d", [&] { return conv2d(x, w, {1, 1, 1}, &cb); }, {x, w, cb});
  run("conv2d strided", [&] { return conv2d(x, w, {2, 1, 1}); }, {x, w});
  run("conv2d dilated", [&] { return conv2d(x, w, {1, 2, 2}); }, {x, w});
  auto g = random_tensor({3}, rng), b = random_tensor({3}, rng);
  BnState st(3);
  run("batchnorm train", [&] { return batchnorm(x, g, b, st, BnMode::kTrain); }, {x, g, b});
  run("batchnorm frozen", [&] { return batchnorm(x, g, b, st, BnMode::kFrozen); }, {x, g, b});
  run("relu", [&] { return relu(x); }, {x});
  run("maxpool", [&] { return maxpool(x, {3, 2, 1, 1}); }, {x});
  run("maxpool dilated", [&] { return maxpool(x, {3, 1, 2, 2}); }, {x});
  run("global_avgpool", [&] { return global_avgpool(x); }, {x});
  auto f = random_tensor({4, 6}, rng), lw = random_tensor({3, 6}, rng), lb = random_tensor({3}, rng);
  run("linear", [&] { return linear(f, lw, &lb); }, {f, lw, lb});
  auto p = random_tensor({2, 3}, rng), q = random_tensor({2, 3}, rng);
  run("add", [&] { return add(p, q); }, {p, q});
  run("sub", [&] { return sub(p, q); }, {p, q});
  run("scale", [&] { return scale(p, -1.7); }, {p});
  run("sum", [&] { return sum(p); }, {p});
  run("gate", [&] { return gate(p, 1.0); }, {p});
  run("dropout", [&] {
    Rng mask(5);
    return dropout(x, 0.3, true, mask);
  }, {x});
  const std::vector<int> labels = {2, 0, 1, 255};
  run("softmax_cross_entropy", [&] { return softmax_cross_entropy(f, labels); }, {f});
  auto m = random_tensor({2, 3, 2, 2}, rng);
  const std::vector<int> pix = {0, 1, 2, 255, 1, 1, 0, 2};
  run("softmax_cross_entropy dense", [&] { return softmax_cross_entropy(m, pix); }, {m});

  const std::array<std::pair<const char*, arch::ShortcutPolicy>, 3> nets{
      {{"32-1-1-1-0-0-0-0", arch::ShortcutPolicy::kProjection},
       {"32-2-0-1-0-1-0-0", arch::ShortcutPolicy::kPadIdentity},
       {"224-0-1-0-0-0-1-0", arch::ShortcutPolicy::kProjection}}};
  for (std::size_t i = 0; i < nets.size(); ++i) {
    auto spec = arch::parse_spec(nets[i].first);
    spec.level_widths = {2, 2, 4, 4, 4, 4, 8};
    spec.num_classes = 3;
    spec.shortcut = nets[i].second;
    auto net = arch::build(spec, {static_cast<std::uint64_t>(70 + i)});
    const std::size_t size = i == 2 ? 16 : 8;
    auto in = random_tensor({2, 3, size, size}, rng);
    std::vector<int> y = {static_cast<int>(rng.below(3)), static_cast<int>(rng.below(3))};
    std::vector<Tensor> params = net.parameters();
    params.push_back(in);
    run(std::string("network ") + nets[i].first,
        [&] {
          arch::RunOptions o;
          o.bn = BnMode::kTrain;
          return softmax_cross_entropy(net.forward(in, o), y);
        },
        params);
  }

  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, e] : errs) {
    if (e > worst || worst_name.empty()) {
      worst = e;
      worst_name = name;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 300.0,
          fmt::format("{} checks, worst {:.3e} ({}), {:.2f} s", errs.size(), worst, worst_name, secs)};
}

// Input gradient of one route, layer by layer with fresh graphs.
Tensor route_input_grad(arch::Network& net, const Tensor& x, const Tensor& seed,
                        const std::vector<bool>& branch) {
  const auto opts = unravel::analysis_options();
  std::vector<Tensor> inputs;
  Tensor h = x;
  {
    NoGradGuard ng;
    for (std::size_t i = 0; i < net.size(); ++i) {
      inputs.push_back(h);
      h = net.forward_layer(i, h, opts);
    }
  }
  auto grad_of = [](const Tensor& leaf) {
    const auto gr = leaf.grad();
    return Tensor::from(leaf.shape(), std::vector<double>(gr.begin(), gr.end()));
  };
  Tensor g = seed;
  std::size_t ordinal = branch.size();
  for (std::size_t i = net.size(); i-- > 0;) {
    Tensor leaf = inputs[i].detach(true);
    if (std::holds_alternative<arch::UnitLayer>(net.layers()[i])) {
      if (branch[--ordinal]) {
        net.unit_branch(i, leaf, opts).backward(g);
        g = grad_of(leaf);
      }
    } else {
      net.forward_layer(i, leaf, opts).backward(g);
      g = grad_of(leaf);
    }
  }
  return g;
}

Outcome path_profile() {
  Rng rng(71);
  auto net = unravel::make_chain({20, 8, arch::UnitKind::kTwoStage, 4}, {72});
  const auto x = random_tensor({4, 8, 4, 4}, rng, 1.0, false);
  std::vector<int> labels(4);
  for (auto& l : labels) l = static_cast<int>(rng.below(4));
  std::vector<std::size_t> ks(21);
  for (std::size_t k = 0; k <= 20; ++k) ks[k] = k;
  const double rho = pathprof::median_trend(pathprof::profile(net, x, labels, ks, 20, 73));

  std::size_t mismatches = 0, compared = 0;
  for (std::size_t n = 1; n <= 5; ++n) {
    auto small = unravel::make_chain({n, 4, arch::UnitKind::kTwoStage, 3}, {80 + n});
    const auto sx = random_tensor({2, 4, 3, 3}, rng, 1.0, false);
    std::vector<int> sl(2);
    for (auto& l : sl) l = static_cast<int>(rng.below(3));
    const auto seed = pathprof::true_class_seed({2, 3}, sl);
    std::vector<std::size_t> sks(n + 1);
    for (std::size_t k = 0; k <= n; ++k) sks[k] = k;
    const auto rep = pathprof::profile(small, sx, sl, sks, 100, 90 + n);
    for (std::size_t k = 0; k <= n; ++k) {
      std::vector<double> norms;
      for (unsigned mask = 0; mask < (1u << n); ++mask) {
        if (static_cast<std::size_t>(std::popcount(mask)) != k) continue;
        std::vector<bool> branch(n);
        for (std::size_t u = 0; u < n; ++u) branch[u] = (mask >> u) & 1;
        norms.push_back(unravel::l2_norm(route_input_grad(small, sx, seed, branch).values()) / 2.0);
      }
      std::sort(norms.begin(), norms.end());
      double acc = 0.0;
      for (double v : norms) acc += v;
      const std::size_t mid = norms.size() / 2;
      const double med = norms.size() % 2 ? norms[mid] : 0.5 * (norms[mid - 1] + norms[mid]);
      const auto& s = rep.per_k[k];
      ++compared;
      mismatches += !(s.trials == norms.size() && s.mean == acc / static_cast<double>(norms.size()) &&
                      s.median == med && s.min == norms.front() && s.max == norms.back());
    }
  }
  return {rho <= -0.8 && mismatches == 0,
          fmt::format("20-unit spearman rho {:.4f}; exhaustive match {}/{}", rho,
                      compared - mismatches, compared)};
}

Outcome fcn_rewrite() {
  auto spec = arch::parse_spec("224-0-1-1-1-1-1-1");
  spec.level_widths = {4, 4, 8, 8, 8, 16, 32};
  spec.num_classes = 5;
  auto net = arch::build(spec, {81});
  Rng rng(82);
  std::vector<std::string> prefixes;
  for (const auto& [pfx, st] : net.bn_states()) prefixes.push_back(pfx);
  for (const auto& pfx : prefixes) {
    auto& st = net.bn_state(pfx);
    st.initialized = true;
    for (auto& v : st.running_mean) v = rng.uniform(-0.3, 0.3);
    for (auto& v : st.running_var) v = rng.uniform(0.5, 2.0);
    for (auto& v : net.param(pfx + ".beta").mutable_values()) v = rng.uniform(-0.2, 0.2);
  }
  seg::SegHead head;
  head.kind = arch::SegHeadKind::kTwoConv;
  head.hidden = 8;
  const auto plan = seg::plan_dilation(net);
  auto fcn = seg::to_fcn(net, plan, head, seg::DropoutPolicy::for_spec(spec), {83});
  const std::size_t feat = seg::feature_layer(fcn);
  const std::size_t os = arch::output_stride(fcn.layers(), feat);

  std::vector<std::size_t> dilation_order;
  for (const auto& l : fcn.layers()) {
    const auto* u = std::get_if<arch::UnitLayer>(&l);
    if (!u || u->stages.front().dilation == 1) continue;
    if (dilation_order.empty() || dilation_order.back() != u->stages.front().dilation) {
      dilation_order.push_back(u->stages.front().dilation);
    }
  }

  const auto x = random_tensor({2, 3, 96, 96}, rng, 1.0, false);
  arch::RunOptions frozen;
  frozen.bn = BnMode::kFrozen;
  NoGradGuard ng;
  const auto y = net.forward_range(x, 0, feat + 1, frozen);
  const auto z = fcn.forward_range(x, 0, feat + 1, frozen);
  const std::size_t step = z.dim(2) / y.dim(2);
  double worst = 0.0;
  const std::size_t n = y.dim(0), c = y.dim(1), h = y.dim(2), w = y.dim(3), zh = z.dim(2),
                    zw = z.dim(3);
  for (std::size_t bi = 0; bi < n; ++bi) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          worst = std::max(worst, std::fabs(y.at(((bi * c + ch) * h + i) * w + j) -
                                            z.at(((bi * c + ch) * zh + step * i) * zw + step * j)));
        }
      }
    }
  }
  const std::size_t rf = seg::head_receptive_field(head, os);
  const bool dil_ok = dilation_order == std::vector<std::size_t>{2, 4};
  return {os == 8 && dil_ok && step == 4 && worst <= 1e-8 && rf == 392,
          fmt::format("output stride {}, unit dilations {}, aligned max diff {:.3e} at [::{}], head "
                      "receptive field {}",
                      os, dil_ok ? "2 then 4" : "unexpected", worst, step, rf)};
}

Outcome metric_oracle() {
  Rng rng(91);
  int matched = 0;
  for (int t = 0; t < 200; ++t) {
    const int classes = 1 + static_cast<int>(rng.below(4));
    const std::size_t h = 1 + rng.below(8), w = 1 + rng.below(8);
    std::vector<int> lab(h * w), pred(h * w);
    for (std::size_t i = 0; i < lab.size(); ++i) {
      lab[i] = rng.uniform() < 0.1 ? 255 : static_cast<int>(rng.below(classes));
      pred[i] = static_cast<int>(rng.below(classes));
    }
    lab[0] = static_cast<int>(rng.below(classes));
    harness::ConfusionMatrix cm(classes);
    cm.add(lab, pred);
    const auto s = harness::seg_scores(cm);

    std::size_t valid = 0, correct = 0;
    double acc_sum = 0.0, iou_sum = 0.0;
    int acc_n = 0, iou_n = 0;
    for (std::size_t i = 0; i < lab.size(); ++i) {
      if (lab[i] == 255) continue;
      ++valid;
      correct += lab[i] == pred[i];
    }
    for (int c = 0; c < classes; ++c) {
      std::size_t tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < lab.size(); ++i) {
        if (lab[i] == 255) continue;
        tp += lab[i] == c && pred[i] == c;
        fp += lab[i] != c && pred[i] == c;
        fn += lab[i] == c && pred[i] != c;
      }
      if (tp + fn > 0) {
        acc_sum += static_cast<double>(tp) / static_cast<double>(tp + fn);
        ++acc_n;
      }
      if (tp + fp + fn > 0) {
        iou_sum += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
        ++iou_n;
      }
    }
    matched += s.pixel_acc == 100.0 * static_cast<double>(correct) / static_cast<double>(valid) &&
               s.mean_acc == 100.0 * acc_sum / acc_n && s.mean_iou == 100.0 * iou_sum / iou_n;
  }
  return {matched == 200, fmt::format("exact match on {}/200 random label maps", matched)};
}

Outcome schedule_contract() {
  harness::TrainConfig cfg;
  cfg.total_iters = 1001;
  const bool ends = harness::lr_at(cfg, 0) == 0.1 && harness::lr_at(cfg, 1000) == 1e-6;
  const double mid = std::fabs(harness::lr_at(cfg, 500) - (0.1 + 1e-6) / 2);
  double d2 = 0.0;
  for (std::size_t i = 1; i + 1 < cfg.total_iters; ++i) {
    d2 = std::max(d2, std::fabs(harness::lr_at(cfg, i + 1) - 2 * harness::lr_at(cfg, i) +
                                harness::lr_at(cfg, i - 1)));
  }
  return {ends && mid <= 1e-15 && d2 <= 1e-15,
          fmt::format("endpoints {}, midpoint error {:.1e}, max second difference {:.1e}",
                      ends ? "exact" : "inexact", mid, d2)};
}

Outcome training_sanity() {
  harness::TrainConfig base;
  base.classes = 2;
  base.image_size = 16;
  base.noise = 1.0;
  base.train_examples = 256;
  base.batch = 16;
  base.total_iters = 2000;
  base.stop_train_acc = 95.0;
  base.check_every = 25;
  base.log_every = 100;
  auto wide = base, deep = base;
  wide.spec = "32-1-1-0-0-0-0-0";
  wide.widths = "12,12,12,8,8,8,8";
  deep.spec = "32-4-4-0-0-0-0-0";
  deep.widths = "6,6,6,8,8,8,8";
  const auto pw = arch::stats(harness::network_spec(wide)).param_count;
  const auto pd = arch::stats(harness::network_spec(deep)).param_count;
  const double ratio = static_cast<double>(pd) / static_cast<double>(pw);
  int wide_ok = 0, deep_ok = 0;
  std::string iters;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    wide.seed = deep.seed = seed;
    const auto rw = harness::train(wide, {});
    const auto rd = harness::train(deep, {});
    wide_ok += rw.train_score >= 95.0;
    deep_ok += rd.train_score >= 95.0;
    iters += fmt::format(" {}/{}", rw.iterations, rd.iterations);
  }
  const bool matched = std::fabs(ratio - 1.0) <= 0.05;
  return {matched && wide_ok >= 4 && deep_ok >= 4,
          fmt::format("params {} vs {} ({:+.1f}%), seeds at >= 95%: wide {}/5, deep {}/5, "
                      "iterations (wide/deep):{}",
                      pw, pd, 100.0 * (ratio - 1.0), wide_ok, deep_ok, iters)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"depth-table reproduction", depth_table},
      {"unravelled-sum identity", unravelled_sum},
      {"exponential-ensemble refutation", ensemble_refutation},
      {"gradient decomposition", gradient_decomposition},
      {"route-enumeration oracle", route_enumeration},
      {"finite-difference suite", finite_differences},
      {"path-profile trend", path_profile},
      {"fcn rewrite", fcn_rewrite},
      {"metric oracle", metric_oracle},
      {"schedule contract", schedule_contract},
      {"training sanity", training_sanity},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << fmt::format("{} {:>2} {}: {}\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                             o.detail)
              << std::flush;
  }
  std::cout << fmt::format("{}/{} criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
