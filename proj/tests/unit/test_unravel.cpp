// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "../support/gradcheck.hpp"
#include "rna/unravel.hpp"

using namespace rna;
using namespace rna::unravel;
using rna::testing::random_tensor;

namespace {

arch::Network chain(std::size_t d, std::size_t w, std::uint64_t seed,
                    arch::UnitKind kind = arch::UnitKind::kTwoStage,
                    std::size_t classes = 0) {
  auto net = make_chain({d, w, kind, classes}, {seed});
  // Non-trivial frozen statistics and affine parameters.
  Rng rng(seed + 1000);
  std::vector<std::string> prefixes;
  for (const auto& [p, st] : net.bn_states()) prefixes.push_back(p);
  for (const auto& p : prefixes) {
    auto& st = net.bn_state(p);
    for (auto& v : st.running_mean) v = rng.uniform(-0.2, 0.2);
    for (auto& v : st.running_var) v = rng.uniform(0.5, 2.0);
  }
  for (const auto& [name, t] : net.params()) {
    if (name.ends_with(".bn.beta")) {
      for (auto& v : net.param(name).mutable_values()) v = rng.uniform(-0.3, 0.3);
    }
  }
  return net;
}

double rel(const Tensor& a, const Tensor& b) { return l2_distance(a, b) / l2_norm(b.values()); }

Tensor forward_eval(arch::Network& net, const Tensor& x) {
  NoGradGuard ng;
  return net.forward(x, analysis_options());
}

bool all_zero(const std::map<std::string, Tensor>& g) {
  for (const auto& [n, t] : g) {
    for (double v : t.values()) {
      if (v != 0.0) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("single unit expands to the input and its residual") {
  auto net = chain(1, 4, 1);
  Rng rng(2);
  auto x = random_tensor({2, 4, 5, 5}, rng, 1.0, false);
  auto terms = expand(net, x);
  REQUIRE(terms.size() == 2);
  CHECK(l2_distance(terms[0].value, x) == 0.0);
  const auto y = forward_eval(net, x);
  CHECK(l2_distance(sum_terms(terms), y) == 0.0);
}

TEST_CASE("two-unit expansion matches the forward pass") {
  auto net = chain(2, 6, 3);
  Rng rng(4);
  auto x = random_tensor({2, 6, 4, 4}, rng, 1.0, false);
  auto terms = expand(net, x);
  CHECK(terms.size() == 3);
  CHECK(rel(sum_terms(terms), forward_eval(net, x)) < 1e-8);
}

TEST_CASE("three-unit terms are residuals of the partial outputs") {
  auto net = chain(3, 4, 5);
  Rng rng(6);
  auto x = random_tensor({1, 4, 4, 4}, rng, 1.0, false);
  auto terms = expand(net, x, 2);
  REQUIRE(terms.size() == 4);
  NoGradGuard ng;
  for (std::size_t i = 1; i <= 3; ++i) {
    auto prefix = net.forward_range(x, 0, i - 1, analysis_options());
    auto f = net.unit_branch(i - 1, prefix, analysis_options());
    CHECK(l2_distance(terms[i].value, f) == 0.0);
    CHECK(terms[i].index == i);
  }
  CHECK(terms[1].actual_depth == 1);
  CHECK(terms[2].actual_depth == 2);
  CHECK(terms[3].actual_depth == 2);
}

TEST_CASE("expansion is linear in depth and sums to the output") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 1 + rng.below(8);
    const std::size_t w = 4 * (1 + rng.below(4));
    const auto kind = static_cast<arch::UnitKind>(rng.below(3));
    auto net = chain(d, w, 100 + trial, kind);
    auto x = random_tensor({2, w, 4, 4}, rng, 1.0, false);
    auto terms = expand(net, x);
    CHECK(terms.size() == d + 1);
    CHECK(rel(sum_terms(terms), forward_eval(net, x)) < 1e-8);
  }
}

TEST_CASE("expansion rejects chains that downsample or project") {
  auto spec = arch::parse_spec("16-1-1-0-0-0-0-0");
  spec.level_widths = {4, 8, 8, 8, 8, 8, 8};
  auto net = arch::build(spec, {1});
  auto x = Tensor::zeros({1, 3, 16, 16});
  CHECK_THROWS_AS(expand(net, x), UnsupportedChain);
  CHECK_THROWS_AS(chain_units(net), UnsupportedChain);
}

TEST_CASE("rectifier counterexample") {
  Mapping r = [](const Tensor& t) { return relu(t); };
  CHECK(nonlinearity_gap(r, Tensor::from({1}, {-1.0}), Tensor::from({1}, {2.0})) == 1.0);
}

TEST_CASE("linear units have no gap, rectified units do") {
  Rng rng(8);
  auto lin = chain(1, 4, 9, arch::UnitKind::kLinear);
  auto a = random_tensor({1, 4, 5, 5}, rng, 1.0, false);
  auto b = random_tensor({1, 4, 5, 5}, rng, 1.0, false);
  CHECK(nonlinearity_gap(unit_mapping(lin, 0), a, b) <= 1e-12);
  auto two = chain(1, 4, 10);
  const double gap = nonlinearity_gap(unit_mapping(two, 0), a, b);
  MESSAGE("two-stage unit gap " << gap);
  CHECK(gap > 0.0);
}

TEST_CASE("routed backward with every route open equals autodiff") {
  auto net = chain(3, 4, 11, arch::UnitKind::kTwoStage, 3);
  Rng rng(12);
  auto x = random_tensor({2, 4, 4, 4}, rng, 1.0, false);
  auto seed = random_tensor({2, 3}, rng, 1.0, false);
  RoutedGraph graph(net, x);
  CHECK(l2_distance(graph.output(), forward_eval(net, x)) == 0.0);
  auto routed = graph.backward(seed);
  auto full = full_gradients(net, x, seed);
  CHECK(rel_diff(routed.param_grads, full.param_grads) < 1e-12);
  CHECK(rel(routed.input_grad, full.input_grad) < 1e-12);
}

TEST_CASE("two-term decomposition of the first unit's gradient") {
  Rng rng(13);
  auto net = chain(2, 4, 14);
  auto x = random_tensor({2, 4, 4, 4}, rng, 1.0, false);
  auto up = random_tensor({2, 4, 4, 4}, rng, 1.0, false);
  auto dec = grad_decomposition(net, x, up);
  CHECK(rel_diff(add_grads(dec.term_direct, dec.term_via_f2), dec.full) < 1e-8);
  CHECK_FALSE(all_zero(dec.term_direct));
  CHECK_FALSE(all_zero(dec.term_via_f2));

  auto gated = truncate_effective_depth(net, 1).gradients(x, up);
  auto w1 = unit_param_grads(net, 0, gated);
  for (const auto& [name, t] : dec.term_direct) {
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(w1.at(name).at(i) == t.at(i));
  }
}

TEST_CASE("zero second mapping removes the second term") {
  Rng rng(15);
  auto net = chain(2, 4, 16);
  for (auto& v : net.param("c.u2.s2.conv.weight").mutable_values()) v = 0.0;
  auto x = random_tensor({1, 4, 4, 4}, rng, 1.0, false);
  auto up = random_tensor({1, 4, 4, 4}, rng, 1.0, false);
  auto dec = grad_decomposition(net, x, up);
  CHECK(all_zero(dec.term_via_f2));
}

TEST_CASE("effective depth at or beyond the chain depth changes nothing") {
  Rng rng(17);
  auto net = chain(4, 4, 18, arch::UnitKind::kTwoStage, 2);
  auto x = random_tensor({2, 4, 4, 4}, rng, 1.0, false);
  auto seed = random_tensor({2, 2}, rng, 1.0, false);
  auto full = full_gradients(net, x, seed);
  for (std::size_t l : {4, 5, 9}) {
    auto g = truncate_effective_depth(net, l).gradients(x, seed);
    CHECK(rel_diff(g.param_grads, full.param_grads) < 1e-10);
  }
  CHECK_THROWS(truncate_effective_depth(net, 0));
}

TEST_CASE("effective depth two drops only the route through both upper branches") {
  Rng rng(19);
  auto net = chain(3, 4, 20);
  auto x = random_tensor({1, 4, 4, 4}, rng, 1.0, false);
  auto up = random_tensor({1, 4, 4, 4}, rng, 1.0, false);
  auto routes = enumerate_routes(net, x, up, 0);
  REQUIRE(routes.size() == 4);
  std::map<std::string, Tensor> kept, dropped;
  for (const auto& r : routes) {
    auto w1 = unit_param_grads(net, 0, r.grads);
    auto& dst = r.branch_count <= 2 ? kept : dropped;
    dst = dst.empty() ? w1 : add_grads(dst, w1);
  }
  auto gated = unit_param_grads(net, 0, truncate_effective_depth(net, 2).gradients(x, up));
  CHECK(rel_diff(gated, kept) < 1e-12);
  CHECK_FALSE(all_zero(dropped));
  auto full = unit_param_grads(net, 0, full_gradients(net, x, up));
  CHECK(rel_diff(add_grads(gated, dropped), full) < 1e-8);
}

TEST_CASE("route enumeration sums to the full gradient") {
  Rng rng(21);
  for (std::size_t d = 1; d <= 4; ++d) {
    auto net = chain(d, 4, 30 + d, arch::UnitKind::kTwoStage, 3);
    auto x = random_tensor({2, 4, 3, 3}, rng, 1.0, false);
    auto seed = random_tensor({2, 3}, rng, 1.0, false);
    auto routes = enumerate_routes(net, x, seed, 0);
    CHECK(routes.size() == (std::size_t{1} << (d - 1)));
    std::map<std::string, Tensor> sum;
    for (const auto& r : routes) {
      auto w1 = unit_param_grads(net, 0, r.grads);
      sum = sum.empty() ? w1 : add_grads(sum, w1);
    }
    auto full = unit_param_grads(net, 0, full_gradients(net, x, seed));
    CAPTURE(d);
    CHECK(rel_diff(sum, full) < 1e-8);
  }
}

TEST_CASE("routes open under l stay open under l + 1") {
  Rng rng(22);
  auto net = chain(4, 4, 23);
  auto x = random_tensor({1, 4, 3, 3}, rng, 1.0, false);
  auto up = random_tensor({1, 4, 3, 3}, rng, 1.0, false);
  RoutedGraph graph(net, x);
  for (const auto& r : enumerate_routes(net, x, up, 0)) {
    bool prev_open = false;
    for (std::size_t l = 1; l <= 5; ++l) {
      auto g = unit_param_grads(net, 0, graph.backward(up, {r.modes, l}));
      const bool open = !all_zero(g);
      if (prev_open) CHECK(open);
      CHECK(open == (r.branch_count <= l));
      prev_open = open;
    }
  }
}
