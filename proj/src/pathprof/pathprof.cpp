// SPDX-License-Identifier: Apache-2.0
#include "rna/pathprof.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <limits>
#include <numeric>

#include "rna/plot.hpp"

namespace rna::pathprof {

std::uint64_t binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t r = 1;
  for (std::size_t i = 1; i <= k; ++i) {
    // r * (n - k + i) / i stays integral at every step.
    const std::uint64_t num = n - k + i;
    if (r > std::numeric_limits<std::uint64_t>::max() / num) {
      return std::numeric_limits<std::uint64_t>::max();
    }
    r = r * num / i;
  }
  return r;
}

std::vector<std::vector<std::size_t>> combinations(std::size_t n, std::size_t k) {
  std::vector<std::vector<std::size_t>> out;
  if (k > n) return out;
  std::vector<std::size_t> c(k);
  std::iota(c.begin(), c.end(), 0);
  while (true) {
    out.push_back(c);
    std::size_t i = k;
    while (i > 0 && c[i - 1] == n - k + i - 1) --i;
    if (i == 0) break;
    ++c[i - 1];
    for (std::size_t j = i; j < k; ++j) c[j] = c[j - 1] + 1;
  }
  return out;
}

std::vector<std::size_t> random_subset(std::size_t n, std::size_t k, Rng& rng) {
  if (k > n) throw std::invalid_argument("subset larger than its ground set");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(idx[i], idx[i + rng.below(n - i)]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Tensor true_class_seed(const Shape& logits_shape, std::span<const int> labels) {
  if (logits_shape.size() != 2) throw ShapeError("true-class seed needs [N, C] logits");
  const std::size_t n = logits_shape[0], c = logits_shape[1];
  if (labels.size() != n) throw ShapeError("one label per example required");
  std::vector<double> seed(n * c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw std::out_of_range("label outside the class range");
    }
    seed[i * c + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return Tensor::from(logits_shape, std::move(seed));
}

PathProfiler::PathProfiler(arch::Network& net, const Tensor& batch, const Tensor& seed)
    : graph_(net, batch), seed_(seed), batch_(batch.dim(0)) {
  if (seed.shape() != graph_.output().shape()) {
    throw ShapeError("loss seed does not match the network output");
  }
}

PathProfiler::PathProfiler(arch::Network& net, const Tensor& batch,
                           std::span<const int> labels)
    : graph_(net, batch),
      seed_(true_class_seed(graph_.output().shape(), labels)),
      batch_(batch.dim(0)) {}

PathSample PathProfiler::run(std::span<const std::size_t> units, std::size_t trial) {
  unravel::RoutePolicy policy;
  policy.modes.assign(graph_.unit_count(), unravel::RouteMode::kShortcutOnly);
  for (std::size_t u : units) policy.modes.at(u) = unravel::RouteMode::kBranchOnly;
  const auto grads = graph_.backward(seed_, policy);
  PathSample s;
  s.k = units.size();
  s.trial = trial;
  s.units.assign(units.begin(), units.end());
  s.grad_norm = unravel::l2_norm(grads.input_grad.values()) / static_cast<double>(batch_);
  s.finite = std::isfinite(s.grad_norm);
  return s;
}

PathSample sample_path_gradient(arch::Network& net, const Tensor& batch,
                                std::span<const int> labels, std::size_t k,
                                std::uint64_t seed) {
  PathProfiler prof(net, batch, labels);
  if (k > prof.units()) {
    throw std::invalid_argument(
        fmt::format("path length {} exceeds the {} units", k, prof.units()));
  }
  Rng rng(seed);
  const auto units = random_subset(prof.units(), k, rng);
  return prof.run(units);
}

KSummary summarize(std::size_t k, std::span<const PathSample> samples) {
  KSummary s;
  s.k = k;
  std::vector<double> v;
  for (const auto& p : samples) {
    if (p.k != k) continue;
    ++s.trials;
    if (p.finite) {
      v.push_back(p.grad_norm);
    } else {
      ++s.excluded;
    }
  }
  if (v.empty()) {
    s.mean = s.median = s.min = s.max = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  std::sort(v.begin(), v.end());
  double acc = 0.0;
  for (double x : v) acc += x;
  s.mean = acc / static_cast<double>(v.size());
  s.min = v.front();
  s.max = v.back();
  s.median = median(v);
  return s;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

ProfileReport profile(PathProfiler& profiler, std::span<const std::size_t> ks,
                      std::size_t trials_per_k, std::uint64_t seed,
                      const std::string& network_name) {
  if (trials_per_k == 0) throw std::invalid_argument("trials per k must be at least 1");
  const std::size_t n = profiler.units();
  ProfileReport report;
  report.network = network_name;
  report.units = n;
  Rng base(seed);
  for (std::size_t k : ks) {
    if (k > n) {
      throw std::invalid_argument(fmt::format("path length {} exceeds the {} units", k, n));
    }
    Rng rng = base.fork(k);
    std::vector<std::vector<std::size_t>> routes;
    const std::uint64_t total = binomial(n, k);
    if (total <= kExactLimit) {
      routes = combinations(n, k);
      for (std::size_t i = routes.size(); i > 1; --i) {
        std::swap(routes[i - 1], routes[rng.below(i)]);
      }
      if (routes.size() > trials_per_k) routes.resize(trials_per_k);
    } else {
      for (std::size_t t = 0; t < trials_per_k; ++t) routes.push_back(random_subset(n, k, rng));
    }
    const std::size_t first = report.samples.size();
    for (std::size_t t = 0; t < routes.size(); ++t) {
      auto s = profiler.run(routes[t], t);
      if (!s.finite) {
        report.warnings.push_back(
            fmt::format("non-finite gradient at k={} trial={} excluded", k, t));
      }
      report.samples.push_back(std::move(s));
    }
    report.per_k.push_back(summarize(
        k, std::span<const PathSample>(report.samples).subspan(first)));
  }
  return report;
}

ProfileReport profile(arch::Network& net, const Tensor& batch,
                      std::span<const int> labels, std::span<const std::size_t> ks,
                      std::size_t trials_per_k, std::uint64_t seed,
                      const std::string& network_name) {
  PathProfiler prof(net, batch, labels);
  return profile(prof, ks, trials_per_k, seed, network_name);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  const std::size_t n = x.size();
  auto ranks = [n](std::span<const double> v) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

double median_trend(const ProfileReport& report) {
  std::vector<double> ks, med;
  for (const auto& s : report.per_k) {
    if (!std::isfinite(s.median)) continue;
    ks.push_back(static_cast<double>(s.k));
    med.push_back(s.median);
  }
  return spearman(ks, med);
}

std::string samples_csv(const ProfileReport& report) {
  std::string out = "k,trial,grad_norm\n";
  for (const auto& s : report.samples) {
    out += fmt::format("{},{},{:.17g}\n", s.k, s.trial, s.grad_norm);
  }
  return out;
}

std::string summary_csv(const ProfileReport& report) {
  std::string out = "k,trials,excluded,mean,median,min,max\n";
  for (const auto& s : report.per_k) {
    out += fmt::format("{},{},{},{:.17g},{:.17g},{:.17g},{:.17g}\n", s.k, s.trials,
                       s.excluded, s.mean, s.median, s.min, s.max);
  }
  return out;
}

std::string median_svg(const ProfileReport& report) {
  plot::LinePlot p;
  p.title = "Input gradient norm by path length" +
            (report.network.empty() ? std::string() : " (" + report.network + ")");
  p.x_label = "path length k";
  p.y_label = "median gradient norm";
  p.log_y = true;
  plot::Series s{"median", {}, {}};
  for (const auto& k : report.per_k) {
    s.x.push_back(static_cast<double>(k.k));
    s.y.push_back(k.median);
  }
  p.series.push_back(std::move(s));
  return plot::to_svg(p);
}

}  // namespace rna::pathprof
